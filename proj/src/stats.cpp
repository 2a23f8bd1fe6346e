#include "hapax/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hapax {

namespace {

// P(X <= k) for X ~ Binomial(n, 1/2), exact in double via log factorials.
double binom_half_cdf(std::uint64_t k, std::uint64_t n) {
  std::vector<double> logfact(n + 1, 0.0);
  for (std::uint64_t i = 1; i <= n; ++i)
    logfact[i] = logfact[i - 1] + std::log(double(i));
  double p = 0.0;
  const double log_half_n = double(n) * std::log(0.5);
  for (std::uint64_t i = 0; i <= k; ++i)
    p += std::exp(logfact[n] - logfact[i] - logfact[n - i] + log_half_n);
  return std::min(p, 1.0);
}

}  // namespace

double mcnemar_p(std::span<const std::uint8_t> a,
                 std::span<const std::uint8_t> b) {
  if (a.size() != b.size())
    throw EvalError("mcnemar: per-sample vectors differ in length (" +
                    std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  std::uint64_t b01 = 0, b10 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    bool ai = a[i] != 0, bi = b[i] != 0;
    if (!ai && bi) ++b01;
    if (ai && !bi) ++b10;
  }
  std::uint64_t n = b01 + b10;
  if (n == 0) return 1.0;
  if (n <= 50) {
    double p = 2.0 * binom_half_cdf(std::min(b01, b10), n);
    return std::min(p, 1.0);
  }
  double diff = std::abs(double(b01) - double(b10)) - 1.0;
  double chi2 = diff * diff / double(n);
  // Survival function of chi-squared with 1 dof.
  return std::erfc(std::sqrt(chi2 / 2.0));
}

double ci_margin(double accuracy, std::uint64_t n) {
  if (accuracy < 0.0 || accuracy > 1.0)
    throw EvalError("ci_margin: accuracy outside [0, 1]");
  if (n < 1) throw EvalError("ci_margin: n must be >= 1");
  return 1.96 * std::sqrt(accuracy * (1.0 - accuracy) / double(n));
}

void write_bits(const std::filesystem::path& path,
                std::span<const std::uint8_t> bits) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  for (auto b : bits) out << (b ? '1' : '0') << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_bits(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::vector<std::uint8_t> bits;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line == "0")
      bits.push_back(0);
    else if (line == "1")
      bits.push_back(1);
    else
      throw FormatError("bad per-sample line in " + path.string() + ": " +
                        line);
  }
  return bits;
}

}  // namespace hapax

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hapax/common.hpp"

namespace hapax {

// Paired McNemar test on two correctness vectors. Exact two-sided binomial
// on the discordant pairs when their count is <= 50, continuity-corrected
// chi-squared above that. No discordant pairs => p = 1.
double mcnemar_p(std::span<const std::uint8_t> a,
                 std::span<const std::uint8_t> b);

// Wald 95% margin: 1.96 * sqrt(p(1-p)/n).
double ci_margin(double accuracy, std::uint64_t n);

// Per-sample correctness files for pairing: one '0'/'1' per line.
void write_bits(const std::filesystem::path& path,
                std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> read_bits(const std::filesystem::path& path);

}  // namespace hapax

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace h2o {

// SHA-1 (FIPS 180-1). Used only to place addresses on the identifier ring;
// collision resistance against adversaries is not a requirement here.
std::array<uint8_t, 20> sha1(std::span<const uint8_t> data);
std::array<uint8_t, 20> sha1(const std::string& s);
std::string sha1_hex(const std::string& s);

}  // namespace h2o

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the text file formats.
namespace esnet::text {

std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_whitespace(std::string_view s);
std::string trim(std::string_view s);

std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace esnet::text

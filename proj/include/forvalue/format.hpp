#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <system_error>

#include "forvalue/error.hpp"

namespace forvalue {

/// Shortest decimal string that parses back to exactly `value`.
inline std::string format_double(double value) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) throw data_error("cannot format value");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view text) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw data_error("not a number: '" + std::string(text) + "'");
    return value;
}

} // namespace forvalue

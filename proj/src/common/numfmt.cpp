// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace autolab
{

auto format_sci6(double value) -> std::string
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.5e", value);
    return buf;
}

auto format_decimal(double value) -> std::string
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", value);
    std::string out = buf;
    if (auto dot = out.find('.'); dot != std::string::npos)
    {
        while (out.back() == '0')
            out.pop_back();
        if (out.back() == '.')
            out.pop_back();
    }
    if (out == "-0")
        out = "0";
    return out;
}

auto format_value(double value) -> std::string
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", value);
    std::string out = buf;
    if (out == "-0")
        out = "0";
    return out;
}

auto parse_double(std::string_view text) -> std::optional<double>
{
    auto body = std::string(trim(text));
    if (body.empty())
        return std::nullopt;
    // strtod would also accept hex floats, inf and nan; instrument text never uses them.
    for (char c: body)
    {
        if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' || c == 'e'
              || c == 'E'))
            return std::nullopt;
    }
    errno = 0;
    char* end = nullptr;
    double value = std::strtod(body.c_str(), &end);
    if (end != body.c_str() + body.size() || errno == ERANGE || !std::isfinite(value))
        return std::nullopt;
    return value;
}

auto trim(std::string_view text) -> std::string_view
{
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
        text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
        text.remove_suffix(1);
    return text;
}

auto to_upper(std::string_view text) -> std::string
{
    std::string out(text);
    for (auto& c: out)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

} // namespace autolab

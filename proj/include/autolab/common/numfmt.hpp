// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace autolab
{

/// Scientific notation with 6 significant digits, e.g. `1.00000e-03`.
/// Used for every current value that crosses a wire or lands in a file.
auto format_sci6(double value) -> std::string;

/// Plain decimal with at most 3 fractional digits and no trailing zeros,
/// e.g. `1000`, `12.5`. Used for stage coordinates.
auto format_decimal(double value) -> std::string;

/// Shortest-ish text for a script value: `%.12g`.
auto format_value(double value) -> std::string;

/// Parses the whole of `text` (surrounding blanks allowed) as a finite double.
auto parse_double(std::string_view text) -> std::optional<double>;

auto trim(std::string_view text) -> std::string_view;

auto to_upper(std::string_view text) -> std::string;

} // namespace autolab

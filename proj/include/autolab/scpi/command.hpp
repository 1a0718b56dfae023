// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace autolab::scpi
{

/// A parameter is either numeric data or character/string data.
using ScpiArg = std::variant<double, std::string>;

struct ScpiCommand
{
    /// Canonical (short, uppercase) mnemonics, e.g. {"SOUR", "VOLT"} or {"*IDN"}.
    std::vector<std::string> path;
    bool is_query = false;
    std::vector<ScpiArg> args;

    auto operator==(const ScpiCommand&) const -> bool = default;
};

class ParseError: public std::runtime_error
{
  public:
    ParseError(std::size_t position, std::string reason);

    [[nodiscard]] auto position() const noexcept -> std::size_t { return _position; }
    [[nodiscard]] auto reason() const noexcept -> const std::string& { return _reason; }

  private:
    std::size_t _position;
    std::string _reason;
};

struct Mnemonic
{
    std::string_view long_form;  // e.g. "SOURce"
    std::string_view short_form; // e.g. "SOUR"
};

/// Every mnemonic that appears in the supported command tree.
auto mnemonic_table() -> std::span<const Mnemonic>;

/// Maps a header segment to its canonical short form. Unknown segments are
/// returned uppercased so that dispatch can reject them.
auto canonical_mnemonic(std::string_view segment) -> std::string;

/// Parses one program message (commands separated by `;`).
///
/// A blank line yields no commands. Headers without a leading `:` after a `;`
/// are resolved relative to the previous header, as in SCPI-99.
auto parse_scpi(std::string_view line) -> std::vector<ScpiCommand>;

/// Canonical text form; `parse_scpi(to_string(c))` yields `{c}`.
auto to_string(const ScpiCommand& command) -> std::string;

/// Number of response lines a server emits for `line`: one per query command,
/// or one if the line fails to parse but contains a `?`.
auto expected_response_lines(std::string_view line) -> std::size_t;

} // namespace autolab::scpi

// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/scpi/command.hpp>

#include <array>
#include <cctype>

#include <fmt/format.h>

namespace autolab::scpi
{

namespace
{

    constexpr auto Mnemonics = std::array {
        Mnemonic { "SOURce", "SOUR" },  Mnemonic { "VOLTage", "VOLT" }, Mnemonic { "FUNCtion", "FUNC" },
        Mnemonic { "ILIMit", "ILIM" },  Mnemonic { "SENSe", "SENS" },   Mnemonic { "OUTPut", "OUTP" },
        Mnemonic { "READ", "READ" },    Mnemonic { "MEASure", "MEAS" }, Mnemonic { "CURRent", "CURR" },
        Mnemonic { "SYSTem", "SYST" },  Mnemonic { "ERRor", "ERR" },
    };

    auto is_alpha(char c) -> bool
    {
        return std::isalpha(static_cast<unsigned char>(c)) != 0;
    }

    auto is_digit(char c) -> bool
    {
        return std::isdigit(static_cast<unsigned char>(c)) != 0;
    }

    auto is_space(char c) -> bool
    {
        return std::isspace(static_cast<unsigned char>(c)) != 0;
    }

    struct Unit
    {
        std::string_view text;
        std::size_t offset;
    };

    // Splits on `;` outside quotes.
    auto split_units(std::string_view line) -> std::vector<Unit>
    {
        std::vector<Unit> units;
        std::size_t start = 0;
        char quote = 0;
        for (std::size_t i = 0; i < line.size(); ++i)
        {
            char c = line[i];
            if (quote)
            {
                if (c == quote)
                    quote = 0;
                continue;
            }
            if (c == '"' || c == '\'')
                quote = c;
            else if (c == ';')
            {
                units.push_back({ line.substr(start, i - start), start });
                start = i + 1;
            }
        }
        if (quote)
            throw ParseError(line.size(), "unbalanced quotes");
        units.push_back({ line.substr(start), start });
        return units;
    }

    auto parse_arg(std::string_view token, std::size_t offset) -> ScpiArg
    {
        if (token.empty())
            throw ParseError(offset, "empty parameter");
        char first = token.front();
        if (first == '"' || first == '\'')
        {
            if (token.size() < 2 || token.back() != first)
                throw ParseError(offset, "unbalanced quotes");
            std::string out;
            auto body = token.substr(1, token.size() - 2);
            for (std::size_t i = 0; i < body.size(); ++i)
            {
                if (body[i] == first)
                {
                    // Embedded quotes must be doubled.
                    if (i + 1 >= body.size() || body[i + 1] != first)
                        throw ParseError(offset + 1 + i, "unbalanced quotes");
                    ++i;
                }
                out.push_back(body[i]);
            }
            return out;
        }
        if (is_digit(first) || first == '+' || first == '-' || first == '.')
        {
            auto value = parse_double(token);
            if (!value)
                throw ParseError(offset, fmt::format("malformed number '{}'", token));
            return *value;
        }
        if (!is_alpha(first))
            throw ParseError(offset, fmt::format("invalid character data '{}'", token));
        for (std::size_t i = 1; i < token.size(); ++i)
        {
            char c = token[i];
            if (!(is_alpha(c) || is_digit(c) || c == '_' || c == ':'))
                throw ParseError(offset + i, fmt::format("invalid character data '{}'", token));
        }
        return to_upper(token);
    }

    auto parse_args(std::string_view text, std::size_t offset) -> std::vector<ScpiArg>
    {
        std::vector<ScpiArg> args;
        if (trim(text).empty())
            return args;
        std::size_t start = 0;
        char quote = 0;
        auto flush = [&](std::size_t end) {
            auto raw = text.substr(start, end - start);
            std::size_t lead = 0;
            while (lead < raw.size() && is_space(raw[lead]))
                ++lead;
            args.push_back(parse_arg(trim(raw), offset + start + lead));
        };
        for (std::size_t i = 0; i < text.size(); ++i)
        {
            char c = text[i];
            if (quote)
            {
                if (c == quote)
                    quote = 0;
                continue;
            }
            if (c == '"' || c == '\'')
                quote = c;
            else if (c == ',')
            {
                flush(i);
                start = i + 1;
            }
        }
        flush(text.size());
        return args;
    }

    auto parse_header(std::string_view header, std::size_t offset, ScpiCommand& out) -> bool
    {
        bool absolute = false;
        if (!header.empty() && header.front() == ':')
        {
            absolute = true;
            header.remove_prefix(1);
            ++offset;
        }
        if (!header.empty() && header.back() == '?')
        {
            out.is_query = true;
            header.remove_suffix(1);
        }
        if (header.empty())
            throw ParseError(offset, "empty header");

        if (header.front() == '*')
        {
            if (absolute)
                throw ParseError(offset - 1, "common command cannot be prefixed with ':'");
            if (header.size() < 2)
                throw ParseError(offset, "empty header");
            for (std::size_t i = 1; i < header.size(); ++i)
                if (!is_alpha(header[i]))
                    throw ParseError(offset + i, "invalid common command");
            out.path.push_back(to_upper(header));
            return true;
        }

        std::size_t seg_start = 0;
        for (std::size_t i = 0; i <= header.size(); ++i)
        {
            if (i < header.size() && header[i] != ':')
                continue;
            auto segment = header.substr(seg_start, i - seg_start);
            if (segment.empty())
                throw ParseError(offset + seg_start, "empty header");
            std::size_t j = 0;
            while (j < segment.size() && is_alpha(segment[j]))
                ++j;
            if (j == 0)
                throw ParseError(offset + seg_start, fmt::format("invalid mnemonic '{}'", segment));
            while (j < segment.size() && is_digit(segment[j]))
                ++j;
            if (j != segment.size())
                throw ParseError(offset + seg_start + j, fmt::format("invalid mnemonic '{}'", segment));
            out.path.push_back(canonical_mnemonic(segment));
            seg_start = i + 1;
        }
        return absolute;
    }

    auto needs_quotes(const std::string& text) -> bool
    {
        if (text.empty() || !is_alpha(text.front()))
            return true;
        for (char c: text)
            if (!(is_alpha(c) || is_digit(c) || c == '_' || c == ':') || std::islower(static_cast<unsigned char>(c)))
                return true;
        return false;
    }

} // namespace

ParseError::ParseError(std::size_t position, std::string reason):
    std::runtime_error(fmt::format("SCPI parse error at {}: {}", position, reason)),
    _position(position),
    _reason(std::move(reason))
{
}

auto mnemonic_table() -> std::span<const Mnemonic>
{
    return Mnemonics;
}

auto canonical_mnemonic(std::string_view segment) -> std::string
{
    auto upper = to_upper(segment);
    for (const auto& m: Mnemonics)
    {
        if (upper == to_upper(m.long_form) || upper == m.short_form)
            return std::string(m.short_form);
    }
    return upper;
}

auto parse_scpi(std::string_view line) -> std::vector<ScpiCommand>
{
    std::vector<ScpiCommand> commands;
    if (trim(line).empty())
        return commands;

    std::vector<std::string> previous_path;
    bool previous_common = true;
    for (const auto& unit: split_units(line))
    {
        std::size_t i = 0;
        while (i < unit.text.size() && is_space(unit.text[i]))
            ++i;
        if (i == unit.text.size())
            throw ParseError(unit.offset + i, "empty header");
        std::size_t header_begin = i;
        while (i < unit.text.size() && !is_space(unit.text[i]))
            ++i;
        auto header = unit.text.substr(header_begin, i - header_begin);

        ScpiCommand command;
        bool absolute = parse_header(header, unit.offset + header_begin, command);
        bool common = command.path.front().front() == '*';
        if (!absolute && !common && !commands.empty() && !previous_common && previous_path.size() > 1)
        {
            std::vector<std::string> full(previous_path.begin(), previous_path.end() - 1);
            full.insert(full.end(), command.path.begin(), command.path.end());
            command.path = std::move(full);
        }
        command.args = parse_args(unit.text.substr(i), unit.offset + i);

        previous_path = command.path;
        previous_common = common;
        commands.push_back(std::move(command));
    }
    return commands;
}

auto to_string(const ScpiCommand& command) -> std::string
{
    std::string out;
    for (const auto& segment: command.path)
    {
        if (segment.front() != '*')
            out += ':';
        out += segment;
    }
    if (command.is_query)
        out += '?';
    for (std::size_t i = 0; i < command.args.size(); ++i)
    {
        out += i == 0 ? " " : ",";
        const auto& arg = command.args[i];
        if (const auto* number = std::get_if<double>(&arg))
            out += fmt::format("{:.17g}", *number);
        else
        {
            const auto& text = std::get<std::string>(arg);
            if (needs_quotes(text))
            {
                out += '"';
                for (char c: text)
                {
                    if (c == '"')
                        out += '"';
                    out += c;
                }
                out += '"';
            }
            else
                out += text;
        }
    }
    return out;
}

auto expected_response_lines(std::string_view line) -> std::size_t
{
    try
    {
        std::size_t n = 0;
        for (const auto& command: parse_scpi(line))
            n += command.is_query ? 1 : 0;
        return n;
    }
    catch (const ParseError&)
    {
        return line.find('?') != std::string_view::npos ? 1 : 0;
    }
}

} // namespace autolab::scpi

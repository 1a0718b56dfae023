// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/labscript/program.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace autolab::labscript
{

namespace
{

    struct Token
    {
        enum class Kind
        {
            Ident,
            Number,
            String,
            Symbol
        };

        Kind kind;
        std::string text; // identifier, symbol, or decoded string
        double number = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
    };

    auto is_ident_start(char c) -> bool
    {
        return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
    }

    auto is_ident_char(char c) -> bool
    {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    }

    auto strip_comment(std::string_view line) -> std::string_view
    {
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i)
        {
            char c = line[i];
            if (in_string)
            {
                if (c == '\\')
                    ++i;
                else if (c == '"')
                    in_string = false;
            }
            else if (c == '"')
                in_string = true;
            else if (c == '#')
                return line.substr(0, i);
        }
        return line;
    }

    auto tokenize(std::string_view text, int line_no) -> std::vector<Token>
    {
        std::vector<Token> tokens;
        std::size_t i = 0;
        while (i < text.size())
        {
            char c = text[i];
            if (std::isspace(static_cast<unsigned char>(c)))
            {
                ++i;
                continue;
            }
            std::size_t begin = i;
            if (is_ident_start(c))
            {
                while (i < text.size() && is_ident_char(text[i]))
                    ++i;
                tokens.push_back({ Token::Kind::Ident, std::string(text.substr(begin, i - begin)), 0.0, begin, i });
            }
            else if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < text.size()
                                                                     && std::isdigit(static_cast<unsigned char>(text[i + 1]))))
            {
                while (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.'))
                    ++i;
                if (i < text.size() && (text[i] == 'e' || text[i] == 'E'))
                {
                    std::size_t j = i + 1;
                    if (j < text.size() && (text[j] == '+' || text[j] == '-'))
                        ++j;
                    if (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])))
                    {
                        i = j;
                        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])))
                            ++i;
                    }
                }
                if (i < text.size() && is_ident_char(text[i]))
                    throw ParseError(line_no, fmt::format("malformed number '{}'", text.substr(begin, i - begin + 1)));
                auto value = parse_double(text.substr(begin, i - begin));
                if (!value)
                    throw ParseError(line_no, fmt::format("malformed number '{}'", text.substr(begin, i - begin)));
                tokens.push_back({ Token::Kind::Number, std::string(text.substr(begin, i - begin)), *value, begin, i });
            }
            else if (c == '"')
            {
                std::string decoded;
                ++i;
                bool closed = false;
                while (i < text.size())
                {
                    char d = text[i++];
                    if (d == '"')
                    {
                        closed = true;
                        break;
                    }
                    if (d == '\\' && i < text.size())
                    {
                        char e = text[i++];
                        switch (e)
                        {
                        case 'n': decoded += '\n'; break;
                        case 't': decoded += '\t'; break;
                        case '"': decoded += '"'; break;
                        case '\\': decoded += '\\'; break;
                        default:
                            decoded += '\\';
                            decoded += e;
                        }
                        continue;
                    }
                    decoded += d;
                }
                if (!closed)
                    throw ParseError(line_no, "unterminated string");
                tokens.push_back({ Token::Kind::String, std::move(decoded), 0.0, begin, i });
            }
            else if (c == '-' && i + 1 < text.size() && text[i + 1] == '>')
            {
                i += 2;
                tokens.push_back({ Token::Kind::Symbol, "->", 0.0, begin, i });
            }
            else if (std::string_view("+-*/(),=").find(c) != std::string_view::npos)
            {
                ++i;
                tokens.push_back({ Token::Kind::Symbol, std::string(1, c), 0.0, begin, i });
            }
            else
                throw ParseError(line_no, fmt::format("unexpected character '{}'", c));
        }
        return tokens;
    }

    auto parse_template(const std::string& source, int line_no) -> Template
    {
        Template result;
        result.source = source;
        std::string literal;
        for (std::size_t i = 0; i < source.size(); ++i)
        {
            char c = source[i];
            if (c == '{' && i + 1 < source.size() && source[i + 1] == '{')
            {
                literal += '{';
                ++i;
            }
            else if (c == '}' && i + 1 < source.size() && source[i + 1] == '}')
            {
                literal += '}';
                ++i;
            }
            else if (c == '{')
            {
                auto close = source.find('}', i);
                if (close == std::string::npos)
                    throw ParseError(line_no, "unclosed '{' in string");
                auto name = std::string(trim(std::string_view(source).substr(i + 1, close - i - 1)));
                if (name.empty() || !is_ident_start(name.front())
                    || !std::all_of(name.begin(), name.end(), [](char ch) { return is_ident_char(ch); }))
                    throw ParseError(line_no, fmt::format("bad placeholder '{{{}}}'", name));
                if (!literal.empty())
                    result.parts.emplace_back(std::exchange(literal, {}));
                result.parts.emplace_back(Template::Placeholder { name });
                i = close;
            }
            else
                literal += c;
        }
        if (!literal.empty())
            result.parts.emplace_back(std::move(literal));
        return result;
    }

    class LineParser
    {
      public:
        LineParser(std::vector<Token> tokens, std::string_view text, int line_no):
            _tokens(std::move(tokens)), _text(text), _line(line_no)
        {
        }

        [[noreturn]] void fail(const std::string& message) const { throw ParseError(_line, message); }

        [[nodiscard]] auto at_end() const -> bool { return _pos >= _tokens.size(); }

        auto peek_symbol(std::string_view symbol) const -> bool
        {
            return !at_end() && _tokens[_pos].kind == Token::Kind::Symbol && _tokens[_pos].text == symbol;
        }

        auto peek_keyword(std::string_view word) const -> bool
        {
            return !at_end() && _tokens[_pos].kind == Token::Kind::Ident && to_upper(_tokens[_pos].text) == word;
        }

        void expect_symbol(std::string_view symbol)
        {
            if (!peek_symbol(symbol))
                fail(fmt::format("expected '{}'", symbol));
            ++_pos;
        }

        void expect_keyword(std::string_view word)
        {
            if (!peek_keyword(word))
                fail(fmt::format("expected {}", word));
            ++_pos;
        }

        auto ident(std::string_view what) -> std::string
        {
            if (at_end() || _tokens[_pos].kind != Token::Kind::Ident)
                fail(fmt::format("expected {}", what));
            return _tokens[_pos++].text;
        }

        auto string(std::string_view what) -> std::string
        {
            if (at_end() || _tokens[_pos].kind != Token::Kind::String)
                fail(fmt::format("expected quoted {}", what));
            return _tokens[_pos++].text;
        }

        auto signed_number(std::string_view what) -> double
        {
            double sign = 1.0;
            if (peek_symbol("-") || peek_symbol("+"))
            {
                sign = _tokens[_pos].text == "-" ? -1.0 : 1.0;
                ++_pos;
            }
            if (at_end() || _tokens[_pos].kind != Token::Kind::Number)
                fail(fmt::format("expected number for {}", what));
            return sign * _tokens[_pos++].number;
        }

        auto optional_number() -> std::optional<double>
        {
            if (at_end())
                return std::nullopt;
            return signed_number("timeout");
        }

        void finish()
        {
            if (!at_end())
                fail(fmt::format("unexpected '{}'", _text.substr(_tokens[_pos].begin)));
        }

        // expr := term (('+'|'-') term)*
        auto expression() -> ExprPtr
        {
            auto lhs = term();
            while (peek_symbol("+") || peek_symbol("-"))
            {
                char op = _tokens[_pos++].text.front();
                lhs = binary(op, lhs, term());
            }
            return lhs;
        }

        auto expression_with_source() -> std::pair<ExprPtr, std::string>
        {
            if (at_end())
                fail("expected expression");
            auto begin = _tokens[_pos].begin;
            auto expr = expression();
            auto end = _tokens[_pos - 1].end;
            return { expr, std::string(_text.substr(begin, end - begin)) };
        }

      private:
        auto term() -> ExprPtr
        {
            auto lhs = unary();
            while (peek_symbol("*") || peek_symbol("/"))
            {
                char op = _tokens[_pos++].text.front();
                lhs = binary(op, lhs, unary());
            }
            return lhs;
        }

        auto unary() -> ExprPtr
        {
            if (peek_symbol("-"))
            {
                ++_pos;
                auto e = std::make_shared<Expr>();
                e->kind = Expr::Kind::Negate;
                e->lhs = unary();
                return e;
            }
            if (peek_symbol("+"))
            {
                ++_pos;
                return unary();
            }
            return primary();
        }

        auto primary() -> ExprPtr
        {
            if (at_end())
                fail("expected expression");
            const auto& token = _tokens[_pos];
            if (token.kind == Token::Kind::Number)
            {
                ++_pos;
                auto e = std::make_shared<Expr>();
                e->number = token.number;
                return e;
            }
            if (token.kind == Token::Kind::Ident)
            {
                ++_pos;
                auto e = std::make_shared<Expr>();
                e->kind = Expr::Kind::Variable;
                e->name = token.text;
                return e;
            }
            if (peek_symbol("("))
            {
                ++_pos;
                auto inner = expression();
                expect_symbol(")");
                return inner;
            }
            fail(fmt::format("unexpected '{}' in expression", token.text));
        }

        static auto binary(char op, ExprPtr lhs, ExprPtr rhs) -> ExprPtr
        {
            auto e = std::make_shared<Expr>();
            e->kind = Expr::Kind::Binary;
            e->op = op;
            e->lhs = std::move(lhs);
            e->rhs = std::move(rhs);
            return e;
        }

        std::vector<Token> _tokens;
        std::string_view _text;
        int _line;
        std::size_t _pos = 0;
    };

    auto take_verb(LineParser& p) -> std::string
    {
        return to_upper(p.ident("statement keyword"));
    }

    void require_alias(LineParser& p, const std::set<std::string>& opened, const std::string& alias)
    {
        if (!opened.count(alias))
            p.fail(fmt::format("alias '{}' is used before OPEN", alias));
    }

} // namespace

ParseError::ParseError(int line, std::string message):
    std::runtime_error(fmt::format("line {}: {}", line, message)), _line(line), _message(std::move(message))
{
}

auto sweep_count(double from, double to, double step) -> double
{
    return std::floor((to - from) / step + 1e-9) + 1.0;
}

auto parse_program(std::string_view source) -> Program
{
    Program program;
    std::set<std::string> opened;

    struct OpenBlock
    {
        Block* block;
        int line;
    };
    std::vector<OpenBlock> stack { { &program.statements, 0 } };

    int line_no = 0;
    std::size_t start = 0;
    while (start <= source.size())
    {
        auto newline = source.find('\n', start);
        auto raw = source.substr(start, newline == std::string_view::npos ? std::string_view::npos : newline - start);
        start = newline == std::string_view::npos ? source.size() + 1 : newline + 1;
        ++line_no;

        auto text = strip_comment(raw);
        if (!text.empty() && text.back() == '\r')
            text.remove_suffix(1);
        auto tokens = tokenize(text, line_no);
        if (tokens.empty())
            continue;

        LineParser p(std::move(tokens), text, line_no);
        auto verb = take_verb(p);
        Statement statement;
        statement.line = line_no;

        if (verb == "OPEN")
        {
            OpenStmt open;
            open.alias = p.ident("alias");
            open.resource_id = p.string("resource id");
            if (p.peek_keyword("AS"))
                p.expect_keyword("AS");
            if (!p.at_end())
            {
                auto word = p.ident("protocol");
                open.protocol = net::parse_kind(word);
                if (!open.protocol)
                    p.fail(fmt::format("unknown protocol '{}' (use SCPI or STAGE)", word));
            }
            p.finish();
            opened.insert(open.alias);
            statement.node = std::move(open);
        }
        else if (verb == "WRITE")
        {
            WriteStmt write;
            write.alias = p.ident("alias");
            require_alias(p, opened, write.alias);
            write.text = parse_template(p.string("command"), line_no);
            p.finish();
            statement.node = std::move(write);
        }
        else if (verb == "QUERY")
        {
            QueryStmt query;
            query.alias = p.ident("alias");
            require_alias(p, opened, query.alias);
            query.text = parse_template(p.string("command"), line_no);
            p.expect_symbol("->");
            query.bind = p.ident("variable name");
            p.finish();
            statement.node = std::move(query);
        }
        else if (verb == "MOVE")
        {
            MoveStmt move;
            move.alias = p.ident("alias");
            require_alias(p, opened, move.alias);
            move.x = p.expression();
            if (p.peek_symbol(","))
                p.expect_symbol(",");
            if (p.at_end())
                p.fail("expected two coordinates (MOVE <alias> <x>, <y>)");
            move.y = p.expression();
            p.finish();
            statement.node = std::move(move);
        }
        else if (verb == "WAIT_IDLE" || verb == "WAITIDLE")
        {
            WaitIdleStmt wait;
            wait.alias = p.ident("alias");
            require_alias(p, opened, wait.alias);
            if (auto timeout = p.optional_number())
            {
                if (!(*timeout > 0.0))
                    p.fail("WAIT_IDLE timeout must be > 0 ms");
                wait.timeout_ms = *timeout;
            }
            p.finish();
            statement.node = wait;
        }
        else if (verb == "SET")
        {
            SetStmt set;
            set.var = p.ident("variable name");
            p.expect_symbol("=");
            set.value = p.expression();
            p.finish();
            statement.node = std::move(set);
        }
        else if (verb == "SWEEP")
        {
            SweepStmt sweep;
            sweep.var = p.ident("variable name");
            p.expect_keyword("FROM");
            sweep.from = p.signed_number("FROM");
            p.expect_keyword("TO");
            sweep.to = p.signed_number("TO");
            p.expect_keyword("STEP");
            sweep.step = p.signed_number("STEP");
            p.finish();
            if (sweep.step == 0.0)
                p.fail("SWEEP step must be non-zero");
            if ((sweep.to - sweep.from) * sweep.step < 0.0)
                p.fail("SWEEP step has the wrong sign to reach TO");
            statement.node = std::move(sweep);
            stack.back().block->push_back(std::move(statement));
            auto& placed = std::get<SweepStmt>(stack.back().block->back().node);
            stack.push_back({ &placed.body, line_no });
            continue;
        }
        else if (verb == "END")
        {
            p.finish();
            if (stack.size() == 1)
                p.fail("END without matching SWEEP");
            stack.pop_back();
            continue;
        }
        else if (verb == "RECORD")
        {
            RecordStmt record;
            do
            {
                if (!record.values.empty())
                    p.expect_symbol(",");
                auto [expr, text] = p.expression_with_source();
                record.values.push_back(std::move(expr));
                record.labels.push_back(std::move(text));
            } while (!p.at_end());
            statement.node = std::move(record);
        }
        else if (verb == "SAVE")
        {
            SaveStmt save { p.string("path") };
            p.finish();
            statement.node = std::move(save);
        }
        else if (verb == "PRINT")
        {
            PrintStmt print { parse_template(p.string("text"), line_no) };
            p.finish();
            statement.node = std::move(print);
        }
        else
            p.fail(fmt::format("unknown statement '{}'", verb));

        stack.back().block->push_back(std::move(statement));
    }

    if (stack.size() > 1)
        throw ParseError(stack.back().line, "SWEEP is not closed by END");
    return program;
}

auto grammar_summary() -> std::string_view
{
    return R"(LabScript v1: one statement per line, '#' starts a comment, keywords are case-insensitive.
  OPEN <alias> "<resource id>" [SCPI|STAGE]     connect to a listed instrument
  WRITE <alias> "<command>"                     send a command (no reply expected for SCPI set-commands)
  QUERY <alias> "<command>" -> <var>            send a query and bind the reply (number if numeric, else text)
  MOVE <alias> <x_um>, <y_um>                   start a stage move (micrometers)
  WAIT_IDLE <alias> [<timeout_ms>]              wait until the stage reports IDLE (default 10000 ms)
  SET <var> = <expr>                            arithmetic: + - * / ( ) on numbers and variables
  SWEEP <var> FROM <a> TO <b> STEP <s> ... END  inclusive numeric loop, may nest
  RECORD <expr>[, <expr> ...]                   append a numeric row to the result records
  SAVE "<file>.csv"                             write all records as CSV into the working directory
  PRINT "<text>"                                write a line to stdout
Strings interpolate {var}; use {{ and }} for literal braces.
SCPI errors are drained from the error queue after every SCPI WRITE/QUERY and reported on stderr.)";
}

} // namespace autolab::labscript

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/net/resource.hpp>

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace autolab::labscript
{

inline constexpr int GrammarVersion = 1;

/// Arithmetic over numeric literals and variables.
struct Expr
{
    enum class Kind
    {
        Number,
        Variable,
        Negate,
        Binary
    };

    Kind kind = Kind::Number;
    double number = 0.0;
    std::string name;
    char op = 0;
    std::shared_ptr<const Expr> lhs;
    std::shared_ptr<const Expr> rhs;
};

using ExprPtr = std::shared_ptr<const Expr>;

/// String with `{var}` placeholders; `{{` and `}}` are literal braces.
struct Template
{
    struct Placeholder
    {
        std::string name;
    };
    using Part = std::variant<std::string, Placeholder>;

    std::string source;
    std::vector<Part> parts;
};

struct Statement;
using Block = std::vector<Statement>;

struct OpenStmt
{
    std::string alias;
    std::string resource_id;
    std::optional<net::InstrumentKind> protocol;
};

struct WriteStmt
{
    std::string alias;
    Template text;
};

struct QueryStmt
{
    std::string alias;
    Template text;
    std::string bind;
};

struct MoveStmt
{
    std::string alias;
    ExprPtr x;
    ExprPtr y;
};

struct WaitIdleStmt
{
    std::string alias;
    double timeout_ms = 10000.0;
};

struct SetStmt
{
    std::string var;
    ExprPtr value;
};

struct SweepStmt
{
    std::string var;
    double from = 0.0;
    double to = 0.0;
    double step = 1.0;
    Block body;
};

struct RecordStmt
{
    std::vector<ExprPtr> values;
    std::vector<std::string> labels; // source text of each expression
};

struct SaveStmt
{
    std::string path;
};

struct PrintStmt
{
    Template text;
};

struct Statement
{
    int line = 0;
    std::variant<OpenStmt, WriteStmt, QueryStmt, MoveStmt, WaitIdleStmt, SetStmt, SweepStmt, RecordStmt, SaveStmt,
                 PrintStmt>
        node;
};

struct Program
{
    Block statements;
};

class ParseError: public std::runtime_error
{
  public:
    ParseError(int line, std::string message);

    [[nodiscard]] auto line() const -> int { return _line; }
    [[nodiscard]] auto message() const -> const std::string& { return _message; }

  private:
    int _line;
    std::string _message;
};

/// Parses LabScript source. Throws ParseError on unknown verbs, aliases used
/// before any OPEN, unbalanced SWEEP/END, and zero or wrong-signed steps.
auto parse_program(std::string_view source) -> Program;

/// Number of iterations of a sweep: floor((to - from) / step + 1e-9) + 1.
auto sweep_count(double from, double to, double step) -> double;

/// Compact grammar reference handed to the agent.
auto grammar_summary() -> std::string_view;

} // namespace autolab::labscript

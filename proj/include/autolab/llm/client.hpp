// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace autolab::llm
{

enum class Role
{
    System,
    User,
    Assistant
};

auto role_name(Role role) -> std::string_view;
auto parse_role(std::string_view name) -> std::optional<Role>;

struct ChatMessage
{
    Role role = Role::User;
    std::string content;

    auto operator==(const ChatMessage&) const -> bool = default;
};

struct ChatRequest
{
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
};

class LlmError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class TransportError: public LlmError
{
  public:
    TransportError(int status, const std::string& message): LlmError(message), _status(status) {}
    /// HTTP status, or 0 when no response arrived.
    [[nodiscard]] auto status() const -> int { return _status; }

  private:
    int _status;
};

class DecodeError: public LlmError
{
  public:
    using LlmError::LlmError;
};

class StubExhausted: public LlmError
{
  public:
    using LlmError::LlmError;
};

/// `{"model":..,"messages":[{"role":..,"content":..}],"temperature":..}` with
/// a fixed field order. Throws std::invalid_argument on an empty message list.
auto serialize(const ChatRequest& request) -> std::string;

/// Pulls `choices[0].message.content` out of a chat-completions response body.
auto decode_completion(std::string_view body) -> std::string;

class Backend
{
  public:
    virtual ~Backend() = default;
    virtual auto complete(const ChatRequest& request) -> std::string = 0;
};

struct HttpConfig
{
    /// Full endpoint, e.g. `https://host/v1/chat/completions`.
    std::string url;
    std::string model;
    std::string api_key;
    double timeout_s = 120.0;

    /// Reads AUTOLAB_LLM_URL, AUTOLAB_LLM_MODEL and AUTOLAB_LLM_API_KEY.
    static auto from_env() -> HttpConfig;
};

inline constexpr const char* UrlEnv = "AUTOLAB_LLM_URL";
inline constexpr const char* ModelEnv = "AUTOLAB_LLM_MODEL";
inline constexpr const char* ApiKeyEnv = "AUTOLAB_LLM_API_KEY";

class HttpBackend final: public Backend
{
  public:
    /// Throws std::invalid_argument if the URL cannot be split into host and path.
    explicit HttpBackend(HttpConfig config);

    auto complete(const ChatRequest& request) -> std::string override;

  private:
    HttpConfig _config;
    std::string _origin;
    std::string _path;
};

/// Canned replies for tests and demos.
///
/// A matcher fires when its substring occurs in the last user turn (every user
/// message after the most recent assistant message); the first hit wins and
/// does not move the cursor. Otherwise replies are handed out in order.
class ScriptedStub final: public Backend
{
  public:
    struct Matcher
    {
        std::string contains;
        std::string reply;
    };

    ScriptedStub(std::vector<std::string> replies, std::vector<Matcher> matchers = {});

    /// Loads `{"replies": [...], "matchers": [{"contains":..,"reply":..}]}`.
    /// `${NAME}` in replies is replaced from `variables`.
    static auto from_file(const std::filesystem::path& path, const std::map<std::string, std::string>& variables = {})
        -> std::unique_ptr<ScriptedStub>;
    static auto from_json(std::string_view text, const std::map<std::string, std::string>& variables = {})
        -> std::unique_ptr<ScriptedStub>;

    auto complete(const ChatRequest& request) -> std::string override;

    [[nodiscard]] auto calls() const -> std::size_t;

  private:
    std::vector<std::string> _replies;
    std::vector<Matcher> _matchers;
    std::size_t _cursor = 0;
    std::size_t _calls = 0;
    mutable std::mutex _mutex;
};

/// Replaces `${NAME}` occurrences; unknown names are left as they are.
auto substitute(std::string_view text, const std::map<std::string, std::string>& variables) -> std::string;

} // namespace autolab::llm

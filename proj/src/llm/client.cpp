// SPDX-License-Identifier: Apache-2.0
#include <autolab/llm/client.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

namespace autolab::llm
{

using nlohmann::ordered_json;

namespace
{

    auto env_or_empty(const char* name) -> std::string
    {
        const char* value = std::getenv(name);
        return value ? value : "";
    }

    auto snippet(std::string_view body) -> std::string
    {
        constexpr std::size_t limit = 200;
        if (body.size() <= limit)
            return std::string(body);
        return std::string(body.substr(0, limit)) + "...";
    }

} // namespace

auto role_name(Role role) -> std::string_view
{
    switch (role)
    {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    }
    return "user";
}

auto parse_role(std::string_view name) -> std::optional<Role>
{
    if (name == "system")
        return Role::System;
    if (name == "user")
        return Role::User;
    if (name == "assistant")
        return Role::Assistant;
    return std::nullopt;
}

auto serialize(const ChatRequest& request) -> std::string
{
    if (request.messages.empty())
        throw std::invalid_argument("chat request has no messages");
    ordered_json body;
    body["model"] = request.model;
    body["messages"] = ordered_json::array();
    for (const auto& message: request.messages)
        body["messages"].push_back({ { "role", role_name(message.role) }, { "content", message.content } });
    body["temperature"] = request.temperature;
    return body.dump();
}

auto decode_completion(std::string_view body) -> std::string
{
    nlohmann::json parsed;
    try
    {
        parsed = nlohmann::json::parse(body);
    }
    catch (const nlohmann::json::parse_error& error)
    {
        throw DecodeError(fmt::format("response is not JSON: {}", error.what()));
    }
    try
    {
        return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    }
    catch (const nlohmann::json::exception&)
    {
        throw DecodeError(fmt::format("response has no choices[0].message.content: {}", snippet(body)));
    }
}

auto HttpConfig::from_env() -> HttpConfig
{
    HttpConfig config;
    config.url = env_or_empty(UrlEnv);
    config.model = env_or_empty(ModelEnv);
    config.api_key = env_or_empty(ApiKeyEnv);
    return config;
}

HttpBackend::HttpBackend(HttpConfig config): _config(std::move(config))
{
    auto scheme_end = _config.url.find("://");
    if (scheme_end == std::string::npos)
        throw std::invalid_argument(fmt::format("LLM URL needs a scheme: '{}'", _config.url));
    auto path_start = _config.url.find('/', scheme_end + 3);
    _origin = _config.url.substr(0, path_start);
    _path = path_start == std::string::npos ? "/" : _config.url.substr(path_start);
    if (_origin.size() <= scheme_end + 3)
        throw std::invalid_argument(fmt::format("LLM URL has no host: '{}'", _config.url));
}

auto HttpBackend::complete(const ChatRequest& request) -> std::string
{
    ChatRequest sent = request;
    if (sent.model.empty())
        sent.model = _config.model;
    auto body = serialize(sent);

    httplib::Client client(_origin);
    auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(_config.timeout_s));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(), timeout.count() % 1000000);
    client.set_connection_timeout(10, 0);
    httplib::Headers headers;
    if (!_config.api_key.empty())
        headers.emplace("Authorization", "Bearer " + _config.api_key);

    auto response = client.Post(_path, headers, body, "application/json");
    if (!response)
        throw TransportError(0, fmt::format("request to {} failed: {}", _origin, httplib::to_string(response.error())));
    if (response->status < 200 || response->status >= 300)
        throw TransportError(response->status,
                             fmt::format("HTTP {} from {}: {}", response->status, _origin, snippet(response->body)));
    return decode_completion(response->body);
}

ScriptedStub::ScriptedStub(std::vector<std::string> replies, std::vector<Matcher> matchers):
    _replies(std::move(replies)), _matchers(std::move(matchers))
{
}

auto ScriptedStub::from_file(const std::filesystem::path& path, const std::map<std::string, std::string>& variables)
    -> std::unique_ptr<ScriptedStub>
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error(fmt::format("cannot read stub script {}", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json(buffer.str(), variables);
}

auto ScriptedStub::from_json(std::string_view text, const std::map<std::string, std::string>& variables)
    -> std::unique_ptr<ScriptedStub>
{
    nlohmann::json parsed;
    try
    {
        parsed = nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::parse_error& error)
    {
        throw std::runtime_error(fmt::format("stub script is not JSON: {}", error.what()));
    }
    std::vector<std::string> replies;
    std::vector<Matcher> matchers;
    try
    {
        for (const auto& reply: parsed.at("replies"))
            replies.push_back(substitute(reply.get<std::string>(), variables));
        if (parsed.contains("matchers"))
            for (const auto& matcher: parsed.at("matchers"))
                matchers.push_back({ matcher.at("contains").get<std::string>(),
                                     substitute(matcher.at("reply").get<std::string>(), variables) });
    }
    catch (const nlohmann::json::exception& error)
    {
        throw std::runtime_error(fmt::format("malformed stub script: {}", error.what()));
    }
    return std::make_unique<ScriptedStub>(std::move(replies), std::move(matchers));
}

auto ScriptedStub::complete(const ChatRequest& request) -> std::string
{
    std::lock_guard lock(_mutex);
    ++_calls;

    std::string last_turn;
    for (auto it = request.messages.rbegin(); it != request.messages.rend() && it->role != Role::Assistant; ++it)
        if (it->role == Role::User)
            last_turn.insert(0, it->content + "\n");

    for (const auto& matcher: _matchers)
        if (!matcher.contains.empty() && last_turn.find(matcher.contains) != std::string::npos)
            return matcher.reply;

    if (_cursor >= _replies.size())
        throw StubExhausted(fmt::format("stub script exhausted after {} replies", _replies.size()));
    return _replies[_cursor++];
}

auto ScriptedStub::calls() const -> std::size_t
{
    std::lock_guard lock(_mutex);
    return _calls;
}

auto substitute(std::string_view text, const std::map<std::string, std::string>& variables) -> std::string
{
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto open = text.find("${", pos);
        if (open == std::string_view::npos)
            break;
        auto close = text.find('}', open + 2);
        if (close == std::string_view::npos)
            break;
        out.append(text.substr(pos, open - pos));
        auto name = std::string(text.substr(open + 2, close - open - 2));
        auto it = variables.find(name);
        if (it != variables.end())
            out += it->second;
        else
            out.append(text.substr(open, close - open + 1));
        pos = close + 1;
    }
    out.append(text.substr(pos));
    return out;
}

} // namespace autolab::llm

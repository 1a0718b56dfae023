// SPDX-License-Identifier: Apache-2.0
#include <autolab/llm/client.hpp>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <thread>

using namespace autolab::llm;

namespace
{

    auto request_of(std::vector<ChatMessage> messages) -> ChatRequest
    {
        return { "m1", std::move(messages), 0.0 };
    }

    /// Chat-completions endpoint on a free loopback port.
    class MockEndpoint
    {
      public:
        explicit MockEndpoint(httplib::Server::Handler handler)
        {
            _server.Post("/v1/chat/completions", std::move(handler));
            _port = _server.bind_to_any_port("127.0.0.1");
            _thread = std::thread([this] { _server.listen_after_bind(); });
            _server.wait_until_ready();
        }
        ~MockEndpoint()
        {
            _server.stop();
            _thread.join();
        }
        [[nodiscard]] auto url() const -> std::string
        {
            return "http://127.0.0.1:" + std::to_string(_port) + "/v1/chat/completions";
        }

      private:
        httplib::Server _server;
        int _port = 0;
        std::thread _thread;
    };

} // namespace

TEST(LlmSerialize, FieldOrderIsStable)
{
    auto body = serialize(request_of({ { Role::System, "sys" }, { Role::User, "hi \"there\"" } }));
    EXPECT_EQ(body, R"({"model":"m1","messages":[{"role":"system","content":"sys"},)"
                    R"({"role":"user","content":"hi \"there\""}],"temperature":0.0})");
    EXPECT_EQ(body, serialize(request_of({ { Role::System, "sys" }, { Role::User, "hi \"there\"" } })));
    EXPECT_THROW(serialize(request_of({})), std::invalid_argument);
}

TEST(LlmSerialize, DecodeCompletion)
{
    EXPECT_EQ(decode_completion(R"({"choices":[{"message":{"role":"assistant","content":"ok"}}]})"), "ok");
    EXPECT_THROW(decode_completion("{not json"), DecodeError);
    EXPECT_THROW(decode_completion(R"({"choices":[]})"), DecodeError);
    EXPECT_EQ(parse_role("assistant"), Role::Assistant);
    EXPECT_FALSE(parse_role("tool"));
}

TEST(Stub, RepliesInOrderThenExhausts)
{
    ScriptedStub stub({ "one", "two" });
    auto request = request_of({ { Role::User, "go" } });
    EXPECT_EQ(stub.complete(request), "one");
    EXPECT_EQ(stub.complete(request), "two");
    EXPECT_THROW(stub.complete(request), StubExhausted);
    EXPECT_EQ(stub.calls(), 3u);
}

TEST(Stub, MatchersLookAtTheLastUserTurnOnly)
{
    ScriptedStub stub({ "first", "second" }, { { "PANIC", "matched" } });
    EXPECT_EQ(stub.complete(request_of({ { Role::User, "calm" } })), "first");
    EXPECT_EQ(stub.complete(request_of({ { Role::User, "PANIC" }, { Role::Assistant, "x" }, { Role::User, "calm" } })),
              "second");
    EXPECT_EQ(stub.complete(request_of({ { Role::Assistant, "x" }, { Role::User, "feedback PANIC" },
                                         { Role::User, "reminder" } })),
              "matched");
    EXPECT_THROW(stub.complete(request_of({ { Role::User, "calm" } })), StubExhausted);
}

TEST(Stub, LoadsJsonWithSubstitution)
{
    auto stub = ScriptedStub::from_json(R"({"replies":["open ${SMU} ${NOPE}"]})", { { "SMU", "TCPIP::h::1::SOCKET" } });
    EXPECT_EQ(stub->complete(request_of({ { Role::User, "x" } })), "open TCPIP::h::1::SOCKET ${NOPE}");
    EXPECT_THROW(ScriptedStub::from_json("[1,2"), std::runtime_error);
    EXPECT_THROW(ScriptedStub::from_json(R"({"answers":[]})"), std::runtime_error);
    EXPECT_EQ(substitute("${A}${A}$B{", { { "A", "1" } }), "11$B{");
}

TEST(HttpBackendTest, RoundTripWithBearerKey)
{
    std::string seen_body;
    std::string seen_auth;
    MockEndpoint endpoint([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = req.body;
        seen_auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"reply text"}}]})", "application/json");
    });
    HttpBackend backend({ endpoint.url(), "model-x", "secret-key", 5.0 });
    auto reply = backend.complete(request_of({ { Role::User, "hello" } }));
    EXPECT_EQ(reply, "reply text");
    EXPECT_EQ(seen_auth, "Bearer secret-key");
    auto parsed = nlohmann::json::parse(seen_body);
    EXPECT_EQ(parsed["messages"][0]["content"], "hello");
}

TEST(HttpBackendTest, NoKeyMeansNoAuthorizationHeader)
{
    bool had_header = true;
    MockEndpoint endpoint([&](const httplib::Request& req, httplib::Response& res) {
        had_header = req.has_header("Authorization");
        res.set_content(R"({"choices":[{"message":{"content":"x"}}]})", "application/json");
    });
    HttpBackend backend({ endpoint.url(), "", "", 5.0 });
    backend.complete(request_of({ { Role::User, "hello" } }));
    EXPECT_FALSE(had_header);
}

TEST(HttpBackendTest, ErrorsAreTyped)
{
    MockEndpoint failing([](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("overloaded", "text/plain");
    });
    HttpBackend backend({ failing.url(), "m", "s3cr3t", 5.0 });
    try
    {
        backend.complete(request_of({ { Role::User, "x" } }));
        FAIL() << "expected TransportError";
    }
    catch (const TransportError& error)
    {
        EXPECT_EQ(error.status(), 503);
        EXPECT_NE(std::string(error.what()).find("overloaded"), std::string::npos);
        EXPECT_EQ(std::string(error.what()).find("s3cr3t"), std::string::npos);
    }

    MockEndpoint garbled([](const httplib::Request&, httplib::Response& res) { res.set_content("<html>", "text/html"); });
    HttpBackend garbled_backend({ garbled.url(), "m", "", 5.0 });
    EXPECT_THROW(garbled_backend.complete(request_of({ { Role::User, "x" } })), DecodeError);

    HttpBackend nowhere({ "http://127.0.0.1:1/v1/chat/completions", "m", "", 1.0 });
    try
    {
        nowhere.complete(request_of({ { Role::User, "x" } }));
        FAIL() << "expected TransportError";
    }
    catch (const TransportError& error)
    {
        EXPECT_EQ(error.status(), 0);
    }
    EXPECT_THROW(HttpBackend({ "no-scheme", "m", "", 1.0 }), std::invalid_argument);
}

TEST(HttpBackendTest, ConfigComesFromEnvironment)
{
    ::setenv(UrlEnv, "http://127.0.0.1:9/x", 1);
    ::setenv(ModelEnv, "m-env", 1);
    ::setenv(ApiKeyEnv, "k-env", 1);
    auto config = HttpConfig::from_env();
    EXPECT_EQ(config.url, "http://127.0.0.1:9/x");
    EXPECT_EQ(config.model, "m-env");
    EXPECT_EQ(config.api_key, "k-env");
    ::unsetenv(UrlEnv);
    ::unsetenv(ModelEnv);
    ::unsetenv(ApiKeyEnv);
}

// SPDX-License-Identifier: Apache-2.0
#include <autolab/service/events.hpp>
#include <autolab/service/service.hpp>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include <thread>

#include "fixtures.hpp"

using namespace autolab;
using namespace autolab::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace
{

    const fs::path StubFile = fs::path(AUTOLAB_DATA_DIR) / "stubs" / "iv_demo.json";

    struct Served
    {
        std::unique_ptr<net::Rack> rack = fixture::local_rack();
        fixture::TempDir data;
        std::unique_ptr<Service> service;

        Served()
        {
            ServiceConfig config;
            config.port = 0;
            config.data_dir = data.path();
            config.backend = [](const std::vector<net::ResourceDescriptor>& resources) -> std::unique_ptr<llm::Backend> {
                return llm::ScriptedStub::from_file(StubFile, { { "SMU", resources[0].resource_id } });
            };
            service = std::make_unique<Service>(*rack, config);
            service->start();
        }

        auto client() const -> httplib::Client
        {
            httplib::Client c("127.0.0.1", service->port());
            c.set_read_timeout(10, 0);
            return c;
        }

        auto post(const std::string& path, const json& body) const -> httplib::Result
        {
            return client().Post(path.c_str(), body.dump(), "application/json");
        }

        /// Reads the event stream of `id` until it ends.
        auto stream(const std::string& id, std::uint64_t after = 0) const -> std::vector<json>
        {
            auto res = client().Get(("/v1/events/" + id + "?after=" + std::to_string(after)).c_str());
            std::vector<json> events;
            if (!res)
                return events;
            for (const auto& line: fixture::lines_of(res->body))
                if (!line.empty())
                    events.push_back(json::parse(line));
            return events;
        }

        auto wait_for_state(const std::string& id, agent::SessionState wanted) const -> bool
        {
            for (int i = 0; i < 500; ++i)
            {
                if (service->session_state(id) == wanted)
                    return true;
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            return false;
        }
    };

} // namespace

TEST(EventStreamTest, SequenceAndDropPolicy)
{
    EventStream stream("c0001", 4);
    stream.publish(EventKind::IterationStarted, {});
    for (int i = 0; i < 5; ++i)
        stream.publish(EventKind::PixelMeasured, { { "index", i } });
    auto batch = stream.wait_after(0, std::chrono::milliseconds(0));
    ASSERT_EQ(batch.events.size(), 4u);
    EXPECT_EQ(batch.events[0].kind, EventKind::IterationStarted);
    EXPECT_EQ(batch.events[1].seq, 4u);
    EXPECT_EQ(batch.events[3].seq, 6u);
    EXPECT_EQ(stream.dropped(), 2u);
    EXPECT_FALSE(batch.closed);
    stream.publish(EventKind::ScanFinished, {});
    EXPECT_TRUE(stream.closed());
    EXPECT_EQ(stream.last_seq(), 7u);
    auto line = json::parse(stream.wait_after(6, std::chrono::milliseconds(0)).events[0].to_line());
    EXPECT_EQ(line["kind"], "ScanFinished");
    EXPECT_EQ(line["id"], "c0001");
    EXPECT_EQ(line["seq"], 7);
}

TEST(EventStreamTest, WaitWakesOnPublish)
{
    EventStream stream("s0001", 16);
    std::thread writer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        stream.publish(EventKind::Feedback, { { "content", "x" } });
    });
    auto batch = stream.wait_after(0, std::chrono::seconds(5));
    writer.join();
    ASSERT_EQ(batch.events.size(), 1u);
    EXPECT_EQ(parse_event_kind("Feedback"), EventKind::Feedback);
    EXPECT_TRUE(is_terminal(EventKind::SessionTerminal));
    EXPECT_FALSE(is_terminal(EventKind::Executed));
}

TEST(ServiceHttp, ScanStreamsFourPixelsThenFinished)
{
    Served s;
    auto res = s.post("/v1/scans", { { "plan", { { "nx", 2 }, { "ny", 2 } } } });
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 201);
    auto id = json::parse(res->body)["id"].get<std::string>();
    auto events = s.stream(id);
    ASSERT_EQ(events.size(), 5u);
    for (int i = 0; i < 4; ++i)
    {
        EXPECT_EQ(events[i]["kind"], "PixelMeasured");
        EXPECT_EQ(events[i]["payload"]["index"], i);
    }
    EXPECT_EQ(events[4]["kind"], "ScanFinished");
    EXPECT_EQ(events[4]["payload"]["complete"], true);
    auto resumed = s.stream(id, 3);
    ASSERT_EQ(resumed.size(), 2u);
    EXPECT_EQ(resumed[0]["seq"], 4);

    auto frame = s.client().Get(("/v1/scans/" + id + "/frame").c_str());
    ASSERT_TRUE(frame);
    EXPECT_EQ(frame->status, 200);
    EXPECT_TRUE(fs::exists(s.data / "scans" / (id + ".csv")));
}

TEST(ServiceHttp, BadPlansAndUnknownIds)
{
    Served s;
    EXPECT_EQ(s.post("/v1/scans", { { "plan", { { "nx", 0 }, { "ny", 2 } } } })->status, 400);
    EXPECT_EQ(s.client().Get("/v1/sessions/s9999")->status, 404);
    EXPECT_EQ(s.client().Get("/v1/events/c9999")->status, 404);
    EXPECT_EQ(s.post("/v1/sessions/s9999/approve", json::object())->status, 404);
    EXPECT_EQ(s.post("/v1/sessions", { { "mode", "AUTO" } })->status, 400);
    EXPECT_EQ(s.post("/v1/sessions", { { "goal", "g" }, { "mode", "FAST" } })->status, 400);
    auto rack = s.client().Get("/v1/rack");
    ASSERT_TRUE(rack);
    EXPECT_EQ(json::parse(rack->body)["resources"].size(), 2u);
}

TEST(ServiceHttp, StepSessionGatesExecution)
{
    Served s;
    auto res = s.post("/v1/sessions", { { "goal", "Measure the I-V characteristics of a photoresistor" },
                                        { "mode", "STEP" },
                                        { "predicate", "file_rows:iv.csv:21" } });
    ASSERT_EQ(res->status, 201);
    auto id = json::parse(res->body)["id"].get<std::string>();
    ASSERT_TRUE(s.wait_for_state(id, agent::SessionState::AwaitingApproval));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    EXPECT_EQ(s.service->executions(id), 0u);

    EXPECT_EQ(s.post("/v1/sessions/" + id + "/reject", json::object())->status, 400);
    EXPECT_EQ(s.post("/v1/sessions/" + id + "/approve", { { "by", "op" } })->status, 204);
    EXPECT_EQ(s.post("/v1/sessions/" + id + "/approve", { { "by", "op" } })->status, 409);

    ASSERT_TRUE(s.wait_for_state(id, agent::SessionState::AwaitingApproval));
    EXPECT_EQ(s.service->executions(id), 1u);
    EXPECT_EQ(s.post("/v1/sessions/" + id + "/approve", json::object())->status, 204);
    ASSERT_TRUE(s.wait_for_state(id, agent::SessionState::Succeeded));
    auto conflict = s.post("/v1/sessions/" + id + "/reject", { { "reason", "late" } });
    EXPECT_EQ(conflict->status, 409);
    EXPECT_EQ(json::parse(conflict->body)["error"], "not awaiting approval");

    std::vector<std::string> kinds;
    for (const auto& event: s.stream(id))
        kinds.push_back(event["kind"]);
    ASSERT_GE(kinds.size(), 4u);
    EXPECT_EQ(kinds[0], "IterationStarted");
    EXPECT_EQ(kinds[1], "CodeProposed");
    EXPECT_EQ(kinds[2], "AwaitingApproval");
    EXPECT_EQ(kinds[3], "Executed");
    EXPECT_EQ(kinds.back(), "SessionTerminal");

    auto first = s.client().Get(("/v1/sessions/" + id).c_str());
    auto second = s.client().Get(("/v1/sessions/" + id).c_str());
    EXPECT_EQ(first->body, second->body);
    EXPECT_EQ(json::parse(first->body)["state"], "Succeeded");
}

TEST(ServiceHttp, RejectReasonReachesTheTranscript)
{
    Served s;
    auto res = s.post("/v1/sessions", { { "goal", "IV" }, { "mode", "STEP" }, { "max_iters", 1 } });
    auto id = json::parse(res->body)["id"].get<std::string>();
    ASSERT_TRUE(s.wait_for_state(id, agent::SessionState::AwaitingApproval));
    EXPECT_EQ(s.post("/v1/sessions/" + id + "/reject", { { "by", "op" }, { "reason", "wrong port" } })->status, 204);
    ASSERT_TRUE(s.wait_for_state(id, agent::SessionState::Failed));
    auto session = json::parse(*s.service->session_json(id));
    EXPECT_EQ(session["transcript"].back()["content"], "Iteration 1 was not executed. Operator rejected: wrong port");
    EXPECT_EQ(s.service->executions(id), 0u);
}

TEST(ServiceHttp, SecondServiceOnSamePortFails)
{
    Served s;
    ServiceConfig config;
    config.port = s.service->port();
    config.data_dir = s.data.path();
    Service other(*s.rack, config);
    EXPECT_THROW(other.start(), net::AddressInUse);
}

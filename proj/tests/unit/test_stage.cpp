// SPDX-License-Identifier: Apache-2.0
#include <autolab/stage/stage.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace autolab;
using namespace autolab::stage;

namespace
{

    auto moving_to(StagePose from, StagePose to) -> MotionState
    {
        MotionState state;
        state.current = from;
        return handle_command(state, "MOVE " + std::to_string(to.x) + " " + std::to_string(to.y)).state;
    }

    // Distance from p to the segment a-b.
    auto off_segment(StagePose p, StagePose a, StagePose b) -> double
    {
        double dx = b.x - a.x;
        double dy = b.y - a.y;
        double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
    }

} // namespace

TEST(Stage, Protocol)
{
    MotionState state;
    EXPECT_EQ(handle_command(state, "POS?").response, "0 0");
    EXPECT_EQ(handle_command(state, "STATUS?").response, "IDLE");
    EXPECT_EQ(handle_command(state, "LIMITS?").response, "0 0 75000 75000");
    EXPECT_EQ(handle_command(state, "MOVE 80000 0").response, "ERR 2 RANGE");
    EXPECT_EQ(handle_command(state, "MOVE 1").response, "ERR 1 SYNTAX");
    EXPECT_EQ(handle_command(state, "JUMP").response, "ERR 1 SYNTAX");
    auto moved = handle_command(state, "move 1000 500");
    EXPECT_EQ(moved.response, "OK");
    EXPECT_EQ(handle_command(moved.state, "STATUS?").response, "MOVING");
}

TEST(Stage, ArrivesAfterDistanceOverVelocity)
{
    auto state = moving_to({ 0, 0 }, { 3000, 4000 });
    state = advance_clock(state, 0.5);
    EXPECT_EQ(state.status, MotionStatus::Moving);
    EXPECT_NEAR(state.current.x, 1500.0, 1e-9);
    EXPECT_NEAR(state.current.y, 2000.0, 1e-9);
    state = advance_clock(state, 0.5);
    EXPECT_EQ(state.status, MotionStatus::Idle);
    EXPECT_EQ(state.current, (StagePose { 3000, 4000 }));
}

TEST(Stage, NeverOvershootsProperty)
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> coord(0.0, DefaultTravelUm);
    std::uniform_real_distribution<double> step(0.0, 3.0);
    for (int trial = 0; trial < 500; ++trial)
    {
        StagePose from { coord(rng), coord(rng) };
        StagePose to { coord(rng), coord(rng) };
        auto state = moving_to(from, to);
        to = state.target;
        double remaining = distance(from, to);
        while (state.status == MotionStatus::Moving)
        {
            state = advance_clock(state, step(rng));
            ASSERT_LE(state.remaining(), remaining + 1e-9);
            ASSERT_LE(distance(from, state.current), distance(from, to) + 1e-9);
            ASSERT_LE(off_segment(state.current, from, to), 1e-6);
            ASSERT_TRUE(within_limits(state.current, state.limits));
            remaining = state.remaining();
        }
        ASSERT_EQ(state.current, to);
    }
}

TEST(Stage, ClockAdvanceIsAdditiveProperty)
{
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> coord(0.0, DefaultTravelUm);
    std::uniform_real_distribution<double> dt(0.0, 10.0);
    for (int trial = 0; trial < 1000; ++trial)
    {
        auto state = moving_to({ coord(rng), coord(rng) }, { coord(rng), coord(rng) });
        double a = dt(rng);
        double b = dt(rng);
        auto once = advance_clock(state, a + b);
        auto twice = advance_clock(advance_clock(state, a), b);
        ASSERT_EQ(once.status, twice.status);
        ASSERT_NEAR(once.current.x, twice.current.x, 1e-6);
        ASSERT_NEAR(once.current.y, twice.current.y, 1e-6);
    }
}

TEST(Stage, InstrumentFollowsVirtualClock)
{
    auto clock = std::make_shared<VirtualClock>();
    StageInstrument stage(MotionState {}, clock);
    EXPECT_EQ(stage.handle_line("MOVE 5000 0"), std::vector<std::string> { "OK" });
    clock->sleep_for(from_millis(400));
    EXPECT_EQ(stage.handle_line("POS?"), std::vector<std::string> { "2000 0" });
    clock->sleep_for(from_millis(600));
    EXPECT_EQ(stage.handle_line("STATUS?"), std::vector<std::string> { "IDLE" });
    EXPECT_EQ(stage.pose(), (StagePose { 5000, 0 }));
    stage.reset();
    EXPECT_EQ(stage.pose(), (StagePose {}));
}

TEST(Stage, HomeReturnsToOrigin)
{
    auto state = advance_clock(moving_to({}, { 100, 100 }), 10.0);
    state = advance_clock(handle_command(state, "HOME").state, 10.0);
    EXPECT_EQ(state.current, (StagePose {}));
}

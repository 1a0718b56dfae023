// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/common/clock.hpp>
#include <autolab/net/line_socket.hpp>
#include <autolab/net/resource.hpp>
#include <autolab/scan/scene.hpp>
#include <autolab/scpi/smu.hpp>
#include <autolab/stage/stage.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace autolab::net
{

inline constexpr std::uint16_t DefaultSmuPort = 5025;
inline constexpr std::uint16_t DefaultStagePort = 5026;

struct RackConfig
{
    std::string bind = "127.0.0.1";
    std::uint16_t smu_port = DefaultSmuPort;
    std::uint16_t stage_port = DefaultStagePort;
    bool enable_smu = true;
    bool enable_stage = true;

    /// With no scene, a photoconductor keeps this irradiance (1.0 => 1 kOhm).
    scpi::DeviceModel device = scpi::device::Photoconductor { 10000.0, 9.0, 1.0 };
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    std::optional<std::filesystem::path> scene_path;
    std::optional<scan::Scene> scene;
    scan::SceneMapping scene_mapping;

    stage::MotionState stage_initial;
    /// Defaults to a wall clock when empty.
    ClockPtr clock;
};

class StartupError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// A running set of virtual instruments with their listeners.
///
/// When a scene is configured, the SMU's photoconductor irradiance follows the
/// scene reflectance under the live stage pose, so any client (scan engine or
/// ad-hoc script) sees position-dependent photocurrent.
class Rack
{
  public:
    /// Throws AddressInUse (port taken) or StartupError (bad scene, bad config).
    static auto up(RackConfig config) -> std::unique_ptr<Rack>;

    ~Rack();
    Rack(const Rack&) = delete;
    auto operator=(const Rack&) -> Rack& = delete;

    /// SMU first, then stage. Read-only after startup.
    [[nodiscard]] auto resources() const -> const std::vector<ResourceDescriptor>& { return _resources; }

    /// Back to power-on state: instruments reset, virtual clock rewound.
    void reset();
    void stop();

    [[nodiscard]] auto smu() -> scpi::SmuInstrument* { return _smu.get(); }
    [[nodiscard]] auto stage() -> stage::StageInstrument* { return _stage.get(); }
    [[nodiscard]] auto scene() const -> const std::optional<scan::Scene>& { return _scene; }
    [[nodiscard]] auto clock() const -> const ClockPtr& { return _config.clock; }
    [[nodiscard]] auto config() const -> const RackConfig& { return _config; }

  private:
    explicit Rack(RackConfig config);

    RackConfig _config;
    std::optional<scan::Scene> _scene;
    std::unique_ptr<scpi::SmuInstrument> _smu;
    std::unique_ptr<stage::StageInstrument> _stage;
    std::unique_ptr<LineServer> _smu_server;
    std::unique_ptr<LineServer> _stage_server;
    std::vector<ResourceDescriptor> _resources;
};

/// Text block listing resources the way the agent prompt and CLI show them.
auto describe_resources(const std::vector<ResourceDescriptor>& resources) -> std::string;

} // namespace autolab::net

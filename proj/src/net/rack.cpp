// SPDX-License-Identifier: Apache-2.0
#include <autolab/net/rack.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace autolab::net
{

Rack::Rack(RackConfig config): _config(std::move(config))
{
}

auto Rack::up(RackConfig config) -> std::unique_ptr<Rack>
{
    if (!config.clock)
        config.clock = std::make_shared<WallClock>();
    try
    {
        scpi::validate(config.device);
    }
    catch (const std::invalid_argument& error)
    {
        throw StartupError(fmt::format("bad device model: {}", error.what()));
    }
    if (config.noise_sigma < 0.0)
        throw StartupError("noise sigma must be >= 0");

    std::unique_ptr<Rack> rack(new Rack(config));
    try
    {
        if (config.scene_path)
            rack->_scene = scan::Scene::load_pgm(*config.scene_path, config.scene_mapping);
        else if (config.scene)
            rack->_scene = config.scene;
    }
    catch (const scan::SceneError& error)
    {
        throw StartupError(fmt::format("bad scene file: {}", error.what()));
    }

    if (config.enable_stage)
        rack->_stage = std::make_unique<stage::StageInstrument>(config.stage_initial, config.clock);

    if (config.enable_smu)
    {
        std::optional<scpi::MeasureNoise> noise;
        if (config.noise_sigma > 0.0)
            noise.emplace(config.noise_sigma, config.seed);
        rack->_smu = std::make_unique<scpi::SmuInstrument>(config.device, noise);
        if (rack->_scene && rack->_stage)
        {
            auto* stage = rack->_stage.get();
            const auto* scene = &*rack->_scene;
            rack->_smu->set_irradiance_source([stage, scene]() -> std::optional<double> {
                return scene->reflectance_at(stage->pose());
            });
        }
        auto* smu = rack->_smu.get();
        rack->_smu_server = std::make_unique<LineServer>(
            "smu", config.bind, config.smu_port, [smu](std::string_view line) { return smu->handle_line(line); });
        rack->_resources.push_back({ format_resource_id(config.bind, rack->_smu_server->port()),
                                     InstrumentKind::ScpiSmu, "Virtual source-measure unit (SCPI)" });
    }
    if (config.enable_stage)
    {
        auto* stage = rack->_stage.get();
        rack->_stage_server = std::make_unique<LineServer>(
            "stage", config.bind, config.stage_port, [stage](std::string_view line) { return stage->handle_line(line); });
        rack->_resources.push_back({ format_resource_id(config.bind, rack->_stage_server->port()),
                                     InstrumentKind::XypStage, "Virtual XY stage (line protocol)" });
    }
    return rack;
}

Rack::~Rack()
{
    stop();
}

void Rack::stop()
{
    if (_smu_server)
        _smu_server->stop();
    if (_stage_server)
        _stage_server->stop();
}

void Rack::reset()
{
    if (auto* virtual_clock = dynamic_cast<VirtualClock*>(_config.clock.get()))
        virtual_clock->reset();
    if (_stage)
        _stage->reset();
    if (_smu)
        _smu->reset();
}

auto describe_resources(const std::vector<ResourceDescriptor>& resources) -> std::string
{
    if (resources.empty())
        return "(no instruments)\n";
    std::string out;
    for (const auto& resource: resources)
        out += fmt::format("{}  {}  {}\n", resource.resource_id, kind_name(resource.kind), resource.label);
    return out;
}

} // namespace autolab::net

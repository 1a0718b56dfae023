// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/scpi/command.hpp>

#include <cstddef>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace autolab::scpi
{

inline constexpr auto IdentityString = "VirtualLab,Model 2450,SIM-0001,1.0";
inline constexpr double ResetCurrentLimit = 0.1;
inline constexpr double MaxSourceVoltage = 210.0;
inline constexpr std::size_t ErrorQueueCapacity = 64;

struct ScpiError
{
    int code = 0;
    std::string message;

    auto operator==(const ScpiError&) const -> bool = default;
};

/// Renders an error queue entry the way `:SYST:ERR?` reports it: `-113,"Undefined header"`.
auto format_error(const ScpiError& error) -> std::string;

enum class SourceFunction
{
    Voltage
};

enum class MeasureFunction
{
    Current
};

struct SmuState
{
    SourceFunction source_function = SourceFunction::Voltage;
    double source_level = 0.0;
    double current_limit = ResetCurrentLimit;
    MeasureFunction measure_function = MeasureFunction::Current;
    bool output_on = false;
    std::deque<ScpiError> error_queue;

    /// Queue is bounded; on overflow the newest entry becomes -350 "Queue overflow".
    void push_error(int code, std::string message);
    /// Oldest entry, or {0, "No error"} when empty.
    auto pop_error() -> ScpiError;

    auto operator==(const SmuState&) const -> bool = default;
};

/// Source 0 V, 0.1 A compliance, output off, empty queue.
auto reset_state() -> SmuState;

namespace device
{
    struct Open
    {
        auto operator==(const Open&) const -> bool = default;
    };

    struct Ohmic
    {
        double resistance = 1000.0;

        auto operator==(const Ohmic&) const -> bool = default;
    };

    /// Phenomenological photoconductor: R_eff = r_dark / (1 + k * irradiance).
    struct Photoconductor
    {
        double r_dark = 10000.0;
        double sensitivity_k = 9.0;
        double irradiance = 0.0;

        [[nodiscard]] auto effective_resistance() const -> double;
        auto operator==(const Photoconductor&) const -> bool = default;
    };
} // namespace device

using DeviceModel = std::variant<device::Open, device::Ohmic, device::Photoconductor>;

/// Throws std::invalid_argument if a parameter violates the model's domain.
void validate(const DeviceModel& model);

/// Parses `open`, `ohmic:<ohms>` or `photo:<r_dark>,<k>[,<irradiance>]`.
auto parse_device(std::string_view text) -> DeviceModel;
auto describe(const DeviceModel& model) -> std::string;

/// Current the SMU reads for the present state. `perturbation` is added to
/// the ideal current before compliance clamping (measurement noise).
auto measure_current(const SmuState& state, const DeviceModel& device, double perturbation = 0.0) -> double;

/// Seedable zero-mean Gaussian noise on measured current.
class MeasureNoise
{
  public:
    MeasureNoise(double sigma_amperes, std::uint64_t seed);

    auto sample() -> double;
    [[nodiscard]] auto sigma() const -> double { return _sigma; }

  private:
    double _sigma;
    std::mt19937_64 _rng;
    std::normal_distribution<double> _dist;
};

/// Applies one command. Set-commands return nothing; recognized queries return
/// their response text. Protocol errors never throw; they land in the error queue.
auto dispatch(SmuState& state, const DeviceModel& device, const ScpiCommand& command, MeasureNoise* noise = nullptr)
    -> std::optional<std::string>;

/// Line-level front end of the virtual source-measure unit: parses a program
/// message, dispatches each command and yields exactly one response line per
/// query-form command (empty when the query was rejected).
///
/// The irradiance source, when set, is consulted before each measurement so
/// a photoconductor sees whatever the rack's scene shows at the probe.
class SmuInstrument
{
  public:
    using IrradianceSource = std::function<std::optional<double>()>;

    explicit SmuInstrument(DeviceModel device, std::optional<MeasureNoise> noise = std::nullopt);

    auto handle_line(std::string_view line) -> std::vector<std::string>;

    void set_irradiance_source(IrradianceSource source);
    void reset();

    [[nodiscard]] auto state() const -> SmuState;
    [[nodiscard]] auto device() const -> DeviceModel;

  private:
    mutable std::mutex _mutex;
    SmuState _state;
    DeviceModel _device;
    DeviceModel _initial_device;
    std::optional<MeasureNoise> _noise;
    std::optional<MeasureNoise> _initial_noise;
    IrradianceSource _irradiance;
};

} // namespace autolab::scpi

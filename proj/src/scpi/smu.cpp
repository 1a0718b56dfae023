// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/scpi/smu.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace autolab::scpi
{

namespace
{

    constexpr double MaxCurrentLimit = 1.05;

    auto header_key(const ScpiCommand& command) -> std::string
    {
        std::string key;
        for (const auto& segment: command.path)
        {
            if (!key.empty())
                key += ':';
            key += segment;
        }
        return key;
    }

    // Validates arity and returns the single parameter, or records the error.
    auto single_arg(SmuState& state, const ScpiCommand& command) -> const ScpiArg*
    {
        if (command.args.empty())
        {
            state.push_error(-109, "Missing parameter");
            return nullptr;
        }
        if (command.args.size() > 1)
        {
            state.push_error(-108, "Parameter not allowed");
            return nullptr;
        }
        return &command.args.front();
    }

    auto numeric_arg(SmuState& state, const ScpiCommand& command) -> std::optional<double>
    {
        const auto* arg = single_arg(state, command);
        if (!arg)
            return std::nullopt;
        if (const auto* value = std::get_if<double>(arg))
            return *value;
        state.push_error(-104, "Data type error");
        return std::nullopt;
    }

    auto text_arg(const ScpiArg& arg) -> std::string
    {
        if (const auto* text = std::get_if<std::string>(&arg))
            return to_upper(*text);
        return {};
    }

    auto measure_response(SmuState& state, const DeviceModel& device, MeasureNoise* noise) -> std::string
    {
        double perturbation = noise ? noise->sample() : 0.0;
        return format_sci6(measure_current(state, device, perturbation));
    }

} // namespace

auto format_error(const ScpiError& error) -> std::string
{
    return fmt::format("{},\"{}\"", error.code, error.message);
}

void SmuState::push_error(int code, std::string message)
{
    if (error_queue.size() >= ErrorQueueCapacity)
    {
        error_queue.back() = { -350, "Queue overflow" };
        return;
    }
    error_queue.push_back({ code, std::move(message) });
}

auto SmuState::pop_error() -> ScpiError
{
    if (error_queue.empty())
        return { 0, "No error" };
    auto front = std::move(error_queue.front());
    error_queue.pop_front();
    return front;
}

auto reset_state() -> SmuState
{
    return SmuState {};
}

auto device::Photoconductor::effective_resistance() const -> double
{
    return r_dark / (1.0 + sensitivity_k * irradiance);
}

void validate(const DeviceModel& model)
{
    if (const auto* ohmic = std::get_if<device::Ohmic>(&model))
    {
        if (!(ohmic->resistance > 0.0) || !std::isfinite(ohmic->resistance))
            throw std::invalid_argument("ohmic resistance must be > 0");
    }
    else if (const auto* photo = std::get_if<device::Photoconductor>(&model))
    {
        if (!(photo->r_dark > 0.0) || !std::isfinite(photo->r_dark))
            throw std::invalid_argument("photoconductor r_dark must be > 0");
        if (!(photo->sensitivity_k >= 0.0) || !std::isfinite(photo->sensitivity_k))
            throw std::invalid_argument("photoconductor sensitivity must be >= 0");
        if (!(photo->irradiance >= 0.0 && photo->irradiance <= 1.0))
            throw std::invalid_argument("photoconductor irradiance must be in [0, 1]");
    }
}

auto parse_device(std::string_view text) -> DeviceModel
{
    auto lowered = std::string(trim(text));
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    auto colon = lowered.find(':');
    auto kind = lowered.substr(0, colon);
    std::vector<double> params;
    if (colon != std::string::npos)
    {
        std::string_view rest = std::string_view(lowered).substr(colon + 1);
        while (true)
        {
            auto comma = rest.find(',');
            auto value = parse_double(rest.substr(0, comma));
            if (!value)
                throw std::invalid_argument(fmt::format("bad device parameter in '{}'", text));
            params.push_back(*value);
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
    }

    DeviceModel model;
    if (kind == "open" && params.empty())
        model = device::Open {};
    else if (kind == "ohmic" && params.size() == 1)
        model = device::Ohmic { params[0] };
    else if (kind == "photo" && (params.size() == 2 || params.size() == 3))
        model = device::Photoconductor { params[0], params[1], params.size() == 3 ? params[2] : 1.0 };
    else
        throw std::invalid_argument(fmt::format("unknown device '{}'", text));
    validate(model);
    return model;
}

auto describe(const DeviceModel& model) -> std::string
{
    if (std::holds_alternative<device::Open>(model))
        return "open";
    if (const auto* ohmic = std::get_if<device::Ohmic>(&model))
        return fmt::format("ohmic:{}", ohmic->resistance);
    const auto& photo = std::get<device::Photoconductor>(model);
    return fmt::format("photo:{},{},{}", photo.r_dark, photo.sensitivity_k, photo.irradiance);
}

auto measure_current(const SmuState& state, const DeviceModel& device, double perturbation) -> double
{
    if (!state.output_on || std::holds_alternative<device::Open>(device))
        return 0.0;
    double resistance = 0.0;
    if (const auto* ohmic = std::get_if<device::Ohmic>(&device))
        resistance = ohmic->resistance;
    else
        resistance = std::get<device::Photoconductor>(device).effective_resistance();
    double raw = state.source_level / resistance + perturbation;
    return std::clamp(raw, -state.current_limit, state.current_limit);
}

MeasureNoise::MeasureNoise(double sigma_amperes, std::uint64_t seed):
    _sigma(sigma_amperes), _rng(seed), _dist(0.0, sigma_amperes > 0.0 ? sigma_amperes : 1.0)
{
}

auto MeasureNoise::sample() -> double
{
    return _sigma > 0.0 ? _dist(_rng) : 0.0;
}

auto dispatch(SmuState& state, const DeviceModel& device, const ScpiCommand& command, MeasureNoise* noise)
    -> std::optional<std::string>
{
    const auto key = header_key(command);
    auto undefined = [&]() -> std::optional<std::string> {
        state.push_error(-113, "Undefined header");
        return std::nullopt;
    };
    auto no_params = [&]() {
        if (command.args.empty())
            return true;
        state.push_error(-108, "Parameter not allowed");
        return false;
    };

    if (key == "*IDN")
    {
        if (!command.is_query)
            return undefined();
        if (!no_params())
            return std::nullopt;
        return std::string(IdentityString);
    }
    if (key == "*RST" || key == "*CLS")
    {
        if (command.is_query)
            return undefined();
        if (!no_params())
            return std::nullopt;
        if (key == "*RST")
            state = reset_state();
        else
            state.error_queue.clear();
        return std::nullopt;
    }
    if (key == "SOUR:FUNC")
    {
        if (command.is_query)
            return no_params() ? std::optional<std::string>("VOLT") : std::nullopt;
        if (const auto* arg = single_arg(state, command))
        {
            auto text = text_arg(*arg);
            if (text == "VOLT" || text == "VOLTAGE")
                state.source_function = SourceFunction::Voltage;
            else
                state.push_error(-224, "Illegal parameter value");
        }
        return std::nullopt;
    }
    if (key == "SOUR:VOLT")
    {
        if (command.is_query)
            return no_params() ? std::optional<std::string>(format_sci6(state.source_level)) : std::nullopt;
        if (auto value = numeric_arg(state, command))
        {
            if (std::abs(*value) > MaxSourceVoltage)
                state.push_error(-222, "Data out of range");
            else
                state.source_level = *value;
        }
        return std::nullopt;
    }
    if (key == "SOUR:VOLT:ILIM")
    {
        if (command.is_query)
            return no_params() ? std::optional<std::string>(format_sci6(state.current_limit)) : std::nullopt;
        if (auto value = numeric_arg(state, command))
        {
            if (!(*value > 0.0) || *value > MaxCurrentLimit)
                state.push_error(-222, "Data out of range");
            else
                state.current_limit = *value;
        }
        return std::nullopt;
    }
    if (key == "SENS:FUNC")
    {
        if (command.is_query)
            return no_params() ? std::optional<std::string>("\"CURR:DC\"") : std::nullopt;
        if (const auto* arg = single_arg(state, command))
        {
            auto text = text_arg(*arg);
            if (text == "CURR" || text == "CURRENT" || text == "CURR:DC" || text == "CURRENT:DC")
                state.measure_function = MeasureFunction::Current;
            else
                state.push_error(-224, "Illegal parameter value");
        }
        return std::nullopt;
    }
    if (key == "OUTP")
    {
        if (command.is_query)
            return no_params() ? std::optional<std::string>(state.output_on ? "1" : "0") : std::nullopt;
        if (const auto* arg = single_arg(state, command))
        {
            if (const auto* number = std::get_if<double>(arg))
            {
                if (*number == 1.0 || *number == 0.0)
                    state.output_on = *number == 1.0;
                else
                    state.push_error(-224, "Illegal parameter value");
            }
            else
            {
                auto text = text_arg(*arg);
                if (text == "ON" || text == "OFF")
                    state.output_on = text == "ON";
                else
                    state.push_error(-224, "Illegal parameter value");
            }
        }
        return std::nullopt;
    }
    if (key == "READ" || key == "MEAS:CURR")
    {
        if (!command.is_query)
            return undefined();
        if (!no_params())
            return std::nullopt;
        return measure_response(state, device, noise);
    }
    if (key == "SYST:ERR")
    {
        if (!command.is_query)
            return undefined();
        if (!no_params())
            return std::nullopt;
        return format_error(state.pop_error());
    }
    return undefined();
}

SmuInstrument::SmuInstrument(DeviceModel device, std::optional<MeasureNoise> noise):
    _device(device), _initial_device(device), _noise(noise), _initial_noise(std::move(noise))
{
    validate(_device);
}

auto SmuInstrument::handle_line(std::string_view line) -> std::vector<std::string>
{
    std::lock_guard lock(_mutex);
    std::vector<std::string> responses;
    std::vector<ScpiCommand> commands;
    try
    {
        commands = parse_scpi(line);
    }
    catch (const ParseError& error)
    {
        _state.push_error(-102, "Syntax error");
        for (std::size_t i = 0; i < expected_response_lines(line); ++i)
            responses.emplace_back();
        return responses;
    }

    for (const auto& command: commands)
    {
        auto key = header_key(command);
        if (_irradiance && (key == "READ" || key == "MEAS:CURR"))
        {
            if (auto* photo = std::get_if<device::Photoconductor>(&_device))
            {
                if (auto irradiance = _irradiance())
                    photo->irradiance = std::clamp(*irradiance, 0.0, 1.0);
            }
        }
        auto response = dispatch(_state, _device, command, _noise ? &*_noise : nullptr);
        if (command.is_query)
            responses.push_back(response.value_or(std::string {}));
    }
    return responses;
}

void SmuInstrument::set_irradiance_source(IrradianceSource source)
{
    std::lock_guard lock(_mutex);
    _irradiance = std::move(source);
}

void SmuInstrument::reset()
{
    std::lock_guard lock(_mutex);
    _state = reset_state();
    _device = _initial_device;
    _noise = _initial_noise;
}

auto SmuInstrument::state() const -> SmuState
{
    std::lock_guard lock(_mutex);
    return _state;
}

auto SmuInstrument::device() const -> DeviceModel
{
    std::lock_guard lock(_mutex);
    return _device;
}

} // namespace autolab::scpi

// SPDX-License-Identifier: Apache-2.0
#include <autolab/common/numfmt.hpp>
#include <autolab/net/resource.hpp>

#include <charconv>
#include <vector>

#include <fmt/format.h>

namespace autolab::net
{

auto kind_name(InstrumentKind kind) -> std::string_view
{
    return kind == InstrumentKind::ScpiSmu ? "SCPI_SMU" : "XYP_STAGE";
}

auto parse_kind(std::string_view name) -> std::optional<InstrumentKind>
{
    auto upper = to_upper(name);
    if (upper == "SCPI_SMU" || upper == "SCPI")
        return InstrumentKind::ScpiSmu;
    if (upper == "XYP_STAGE" || upper == "STAGE")
        return InstrumentKind::XypStage;
    return std::nullopt;
}

auto format_resource_id(std::string_view host, std::uint16_t port) -> std::string
{
    return fmt::format("TCPIP::{}::{}::SOCKET", host, port);
}

auto parse_resource_id(std::string_view resource_id) -> std::optional<Endpoint>
{
    std::vector<std::string_view> parts;
    std::string_view rest = trim(resource_id);
    while (true)
    {
        auto sep = rest.find("::");
        parts.push_back(rest.substr(0, sep));
        if (sep == std::string_view::npos)
            break;
        rest.remove_prefix(sep + 2);
    }
    if (parts.size() != 4 || to_upper(parts[0]) != "TCPIP" || to_upper(parts[3]) != "SOCKET" || parts[1].empty())
        return std::nullopt;

    unsigned port = 0;
    auto [end, ec] = std::from_chars(parts[2].data(), parts[2].data() + parts[2].size(), port);
    if (ec != std::errc {} || end != parts[2].data() + parts[2].size() || port == 0 || port > 65535)
        return std::nullopt;
    return Endpoint { std::string(parts[1]), static_cast<std::uint16_t>(port) };
}

} // namespace autolab::net

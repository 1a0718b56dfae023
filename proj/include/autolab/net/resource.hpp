// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace autolab::net
{

enum class InstrumentKind
{
    ScpiSmu,
    XypStage
};

auto kind_name(InstrumentKind kind) -> std::string_view;
auto parse_kind(std::string_view name) -> std::optional<InstrumentKind>;

struct Endpoint
{
    std::string host;
    std::uint16_t port = 0;

    auto operator==(const Endpoint&) const -> bool = default;
};

/// VISA-style raw socket resource, `TCPIP::<host>::<port>::SOCKET`.
struct ResourceDescriptor
{
    std::string resource_id;
    InstrumentKind kind = InstrumentKind::ScpiSmu;
    std::string label;

    auto operator==(const ResourceDescriptor&) const -> bool = default;
};

auto format_resource_id(std::string_view host, std::uint16_t port) -> std::string;

/// Inverse of format_resource_id. The `TCPIP` and `SOCKET` tokens are matched
/// case-insensitively, as VISA does.
auto parse_resource_id(std::string_view resource_id) -> std::optional<Endpoint>;

} // namespace autolab::net

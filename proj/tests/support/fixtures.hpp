// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/common/clock.hpp>
#include <autolab/net/rack.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace autolab::fixture
{

/// Scratch directory removed on destruction.
class TempDir
{
  public:
    TempDir()
    {
        auto base = std::filesystem::temp_directory_path();
        std::random_device entropy;
        for (;;)
        {
            _path = base / ("autolab-test-" + std::to_string(entropy()));
            if (std::filesystem::create_directory(_path))
                break;
        }
    }
    ~TempDir()
    {
        std::error_code ignored;
        std::filesystem::remove_all(_path, ignored);
    }
    TempDir(const TempDir&) = delete;
    auto operator=(const TempDir&) -> TempDir& = delete;

    [[nodiscard]] auto path() const -> const std::filesystem::path& { return _path; }
    auto operator/(const std::string& name) const -> std::filesystem::path { return _path / name; }

  private:
    std::filesystem::path _path;
};

/// Rack on ephemeral loopback ports driven by a virtual clock.
inline auto local_rack(net::RackConfig config = {}) -> std::unique_ptr<net::Rack>
{
    config.bind = "127.0.0.1";
    config.smu_port = 0;
    config.stage_port = 0;
    if (!config.clock)
        config.clock = std::make_shared<VirtualClock>();
    return net::Rack::up(std::move(config));
}

inline auto read_file(const std::filesystem::path& path) -> std::string
{
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline auto write_file(const std::filesystem::path& path, const std::string& text) -> void
{
    std::ofstream(path, std::ios::binary) << text;
}

inline auto lines_of(const std::string& text) -> std::vector<std::string>
{
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        lines.push_back(line);
    return lines;
}

/// Every regular file below `root`, relative paths, sorted.
inline auto tree_listing(const std::filesystem::path& root) -> std::vector<std::string>
{
    std::vector<std::string> files;
    if (!std::filesystem::exists(root))
        return files;
    for (const auto& entry: std::filesystem::recursive_directory_iterator(root))
        files.push_back(entry.path().lexically_relative(root).string());
    std::sort(files.begin(), files.end());
    return files;
}

/// What a reading looks like after a trip over the wire: `%.5e` and back.
inline auto wire_round(double value) -> double
{
    char text[64];
    std::snprintf(text, sizeof text, "%.5e", value);
    return std::strtod(text, nullptr);
}

/// Ideal photoconductor reading for a reflectance, computed from scratch.
inline auto photo_current(double bias, double r_dark, double k, double reflectance, double ilim) -> double
{
    double current = bias / (r_dark / (1.0 + k * reflectance));
    if (current > ilim)
        current = ilim;
    if (current < -ilim)
        current = -ilim;
    return wire_round(current);
}

} // namespace autolab::fixture

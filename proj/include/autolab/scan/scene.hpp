// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <autolab/stage/stage.hpp>

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace autolab::scan
{

/// Placement of the scene bitmap on the stage: pixel (0,0) is centered at
/// (origin_x_um, origin_y_um) and each pixel spans `um_per_pixel`.
struct SceneMapping
{
    double um_per_pixel = 100.0;
    double origin_x_um = 0.0;
    double origin_y_um = 0.0;
};

class SceneError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Grayscale reflectance map standing in for the physical sample.
///
/// Row 0 is the bottom of the sample (smallest stage y). PGM files store the
/// top row first, so `load_pgm` flips on the way in.
class Scene
{
  public:
    Scene(std::size_t width, std::size_t height, std::vector<double> reflectance, SceneMapping mapping = {});

    static auto uniform(std::size_t width, std::size_t height, double value, SceneMapping mapping = {}) -> Scene;
    static auto checkerboard(std::size_t width, std::size_t height, SceneMapping mapping = {}) -> Scene;
    /// High-contrast "2D" glyph pair on a dark background.
    static auto synthetic_logo(std::size_t width, std::size_t height, SceneMapping mapping = {}) -> Scene;
    /// Reads P2 or P5 graymaps. Throws SceneError on malformed input.
    static auto load_pgm(const std::filesystem::path& path, SceneMapping mapping = {}) -> Scene;

    [[nodiscard]] auto width() const -> std::size_t { return _width; }
    [[nodiscard]] auto height() const -> std::size_t { return _height; }
    [[nodiscard]] auto mapping() const -> const SceneMapping& { return _mapping; }
    void set_mapping(SceneMapping mapping) { _mapping = mapping; }

    [[nodiscard]] auto at(std::size_t col, std::size_t row) const -> double { return _data[row * _width + col]; }

    /// Nearest pixel center to `pose`; 0 (black) outside the bitmap.
    [[nodiscard]] auto reflectance_at(stage::StagePose pose) const -> double;

  private:
    std::size_t _width;
    std::size_t _height;
    std::vector<double> _data;
    SceneMapping _mapping;
};

} // namespace autolab::scan

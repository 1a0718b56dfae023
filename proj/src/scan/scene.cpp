// SPDX-License-Identifier: Apache-2.0
#include <autolab/scan/scene.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace autolab::scan
{

namespace
{

    constexpr double Paper = 0.05;
    constexpr double Foil = 1.0;

    // 5x7 glyphs, top row first.
    constexpr std::array<const char*, 7> GlyphTwo = { ".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####" };
    constexpr std::array<const char*, 7> GlyphD = { "####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####." };

    class PgmReader
    {
      public:
        explicit PgmReader(std::string bytes): _bytes(std::move(bytes)) {}

        auto next_token() -> std::string
        {
            skip_blanks();
            std::string token;
            while (_pos < _bytes.size() && !std::isspace(static_cast<unsigned char>(_bytes[_pos])))
                token.push_back(_bytes[_pos++]);
            if (token.empty())
                throw SceneError("truncated PGM header");
            return token;
        }

        auto next_uint() -> std::size_t
        {
            auto token = next_token();
            if (!std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); }))
                throw SceneError(fmt::format("bad PGM integer '{}'", token));
            return std::stoul(token);
        }

        // Exactly one whitespace byte separates the header from P5 raster data.
        void skip_single_blank()
        {
            if (_pos >= _bytes.size() || !std::isspace(static_cast<unsigned char>(_bytes[_pos])))
                throw SceneError("bad PGM raster separator");
            ++_pos;
        }

        auto raw_byte() -> unsigned
        {
            if (_pos >= _bytes.size())
                throw SceneError("truncated PGM raster");
            return static_cast<unsigned char>(_bytes[_pos++]);
        }

      private:
        void skip_blanks()
        {
            while (_pos < _bytes.size())
            {
                char c = _bytes[_pos];
                if (c == '#')
                {
                    while (_pos < _bytes.size() && _bytes[_pos] != '\n')
                        ++_pos;
                }
                else if (std::isspace(static_cast<unsigned char>(c)))
                    ++_pos;
                else
                    break;
            }
        }

        std::string _bytes;
        std::size_t _pos = 0;
    };

} // namespace

Scene::Scene(std::size_t width, std::size_t height, std::vector<double> reflectance, SceneMapping mapping):
    _width(width), _height(height), _data(std::move(reflectance)), _mapping(mapping)
{
    if (width == 0 || height == 0)
        throw SceneError("scene must have at least one pixel");
    if (_data.size() != width * height)
        throw SceneError(fmt::format("scene data has {} values, expected {}", _data.size(), width * height));
    if (!(mapping.um_per_pixel > 0.0))
        throw SceneError("scene scale must be > 0");
    for (auto& value: _data)
        value = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
}

auto Scene::uniform(std::size_t width, std::size_t height, double value, SceneMapping mapping) -> Scene
{
    return Scene(width, height, std::vector<double>(width * height, value), mapping);
}

auto Scene::checkerboard(std::size_t width, std::size_t height, SceneMapping mapping) -> Scene
{
    std::vector<double> data(width * height);
    for (std::size_t row = 0; row < height; ++row)
        for (std::size_t col = 0; col < width; ++col)
            data[row * width + col] = (row + col) % 2 == 0 ? 1.0 : 0.0;
    return Scene(width, height, std::move(data), mapping);
}

auto Scene::synthetic_logo(std::size_t width, std::size_t height, SceneMapping mapping) -> Scene
{
    constexpr long GridCols = 13; // margin + 5 + gap + 5 + margin
    constexpr long GridRows = 9;  // margin + 7 + margin
    std::vector<double> data(width * height, Paper);
    for (std::size_t row = 0; row < height; ++row)
    {
        auto top_row = static_cast<long>(height - 1 - row);
        long gy = top_row * GridRows / static_cast<long>(height) - 1;
        if (gy < 0 || gy >= 7)
            continue;
        for (std::size_t col = 0; col < width; ++col)
        {
            long gx = static_cast<long>(col) * GridCols / static_cast<long>(width) - 1;
            bool lit = false;
            if (gx >= 0 && gx < 5)
                lit = GlyphTwo[gy][gx] == '#';
            else if (gx >= 6 && gx < 11)
                lit = GlyphD[gy][gx - 6] == '#';
            if (lit)
                data[row * width + col] = Foil;
        }
    }
    return Scene(width, height, std::move(data), mapping);
}

auto Scene::load_pgm(const std::filesystem::path& path, SceneMapping mapping) -> Scene
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw SceneError(fmt::format("cannot open scene file '{}'", path.string()));
    PgmReader reader(std::string(std::istreambuf_iterator<char>(in), {}));

    auto magic = reader.next_token();
    if (magic != "P2" && magic != "P5")
        throw SceneError(fmt::format("'{}' is not a PGM file", path.string()));
    auto width = reader.next_uint();
    auto height = reader.next_uint();
    auto maxval = reader.next_uint();
    if (width == 0 || height == 0 || maxval == 0 || maxval > 65535)
        throw SceneError("bad PGM dimensions");
    if (width * height > 64u * 1024u * 1024u)
        throw SceneError("PGM too large");

    std::vector<double> top_first(width * height);
    if (magic == "P2")
    {
        for (auto& value: top_first)
        {
            auto v = reader.next_uint();
            if (v > maxval)
                throw SceneError("PGM sample exceeds maxval");
            value = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }
    else
    {
        reader.skip_single_blank();
        for (auto& value: top_first)
        {
            unsigned v = reader.raw_byte();
            if (maxval > 255)
                v = (v << 8) | reader.raw_byte();
            if (v > maxval)
                throw SceneError("PGM sample exceeds maxval");
            value = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }

    std::vector<double> data(width * height);
    for (std::size_t row = 0; row < height; ++row)
        std::copy_n(top_first.begin() + static_cast<std::ptrdiff_t>((height - 1 - row) * width), width,
                    data.begin() + static_cast<std::ptrdiff_t>(row * width));
    return Scene(width, height, std::move(data), mapping);
}

auto Scene::reflectance_at(stage::StagePose pose) const -> double
{
    double u = (pose.x - _mapping.origin_x_um) / _mapping.um_per_pixel;
    double v = (pose.y - _mapping.origin_y_um) / _mapping.um_per_pixel;
    double col = std::floor(u + 0.5);
    double row = std::floor(v + 0.5);
    if (col < 0.0 || row < 0.0 || col >= static_cast<double>(_width) || row >= static_cast<double>(_height))
        return 0.0;
    return at(static_cast<std::size_t>(col), static_cast<std::size_t>(row));
}

} // namespace autolab::scan

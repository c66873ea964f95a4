// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#include "cagesplat/config.hpp"

#include "cagesplat/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace cagesplat {

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

template <class T> T parse_number(const std::string &text) {
    if constexpr (std::is_unsigned_v<T>)
        if (trim(text).starts_with('-')) throw std::invalid_argument("must not be negative: '" + text + "'");
    std::istringstream in(trim(text));
    T v{};
    in >> v;
    if (!in || !in.eof()) throw std::invalid_argument("not a number: '" + text + "'");
    return v;
}

bool parse_bool(const std::string &text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw std::invalid_argument("not a boolean: '" + text + "'");
}

std::string fmt(double v) {
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return out.str();
}

std::string modes_string(const std::vector<DeformMode> &m) {
    std::string s;
    for (std::size_t i = 0; i < m.size(); ++i) s += (i ? "," : "") + to_string(m[i]);
    return s;
}

std::vector<DeformMode> parse_modes(const std::string &text) {
    std::vector<DeformMode> out;
    for (const auto &p : split(text, ',')) out.push_back(parse_mode(p));
    if (out.empty()) throw std::invalid_argument("empty mode list");
    return out;
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(const std::string &)> set;
    std::function<std::string()> get;
};

template <class T> Field number(const char *sec, const char *key, T &ref) {
    return {sec, key, [&ref](const std::string &v) { ref = parse_number<T>(v); },
            [&ref] {
                if constexpr (std::is_floating_point_v<T>)
                    return fmt(ref);
                else
                    return std::to_string(ref);
            }};
}

Field flag(const char *sec, const char *key, bool &ref) {
    return {sec, key, [&ref](const std::string &v) { ref = parse_bool(v); }, [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field text(const char *sec, const char *key, std::string &ref) {
    return {sec, key, [&ref](const std::string &v) { ref = trim(v); }, [&ref] { return ref; }};
}

std::vector<Field> fields(PipelineConfig &c) {
    std::vector<Field> f{
        number("general", "seed", c.general.seed),

        number("scene", "sheet_size", c.scene.sheet_size),
        number("scene", "sheet_thickness", c.scene.sheet_thickness),
        number("scene", "gaussians", c.scene.gaussians),
        number("scene", "shape_factor", c.scene.shape_factor),
        number("scene", "opacity", c.scene.opacity),

        {"cage", "dims",
         [&c](const std::string &v) {
             const auto parts = split(v, ',');
             if (parts.size() != 3) throw std::invalid_argument("expected three comma-separated sizes");
             for (int a = 0; a < 3; ++a) c.cage.dims[a] = parse_number<int>(parts[a]);
         },
         [&c] {
             return std::to_string(c.cage.dims[0]) + "," + std::to_string(c.cage.dims[1]) + "," +
                    std::to_string(c.cage.dims[2]);
         }},
        number("cage", "k", c.cage.k),
        number("cage", "epsilon", c.cage.epsilon),
        number("cage", "lambda_reg", c.cage.lambda_reg),

        number("sensor", "rows", c.sensor.rows),
        number("sensor", "cols", c.sensor.cols),
        number("sensor", "sample_hz", c.sensor.sample_hz),
        number("sensor", "cutoff_hz", c.sensor.cutoff_hz),
        flag("sensor", "median", c.sensor.median),
        number("sensor", "noise_ohm", c.sensor.noise_ohm),
        number("sensor", "r0_ohm", c.sensor.r0_ohm),
        number("sensor", "r0_spread", c.sensor.r0_spread),
        number("sensor", "gauge_factor", c.sensor.gauge_factor),
        number("sensor", "strain_offset", c.sensor.strain_offset),
        flag("sensor", "adc", c.sensor.adc),
        number("sensor", "adc_bits", c.sensor.adc_bits),

        {"gen", "modes", [&c](const std::string &v) { c.gen.modes = parse_modes(v); },
         [&c] { return modes_string(c.gen.modes); }},
        number("gen", "n_axes", c.gen.n_axes),
        number("gen", "n_keyposes", c.gen.n_keyposes),
        number("gen", "n_interp", c.gen.n_interp),
        number("gen", "max_magnitude_deg", c.gen.max_magnitude_deg),
        number("gen", "anchor", c.gen.anchor),

        {"model", "architecture", [&c](const std::string &v) { c.model.architecture = parse_architecture(trim(v)); },
         [&c] { return to_string(c.model.architecture); }},
        number("model", "conv1_channels", c.model.conv1_channels),
        number("model", "conv2_channels", c.model.conv2_channels),
        number("model", "feature_dim", c.model.feature_dim),
        number("model", "time_bands", c.model.time_bands),
        number("model", "heads", c.model.heads),
        number("model", "hidden", c.model.hidden),
        number("model", "coord_scale", c.model.coord_scale),
        number("model", "direct_points", c.direct_points),

        number("train", "epochs", c.train.epochs),
        number("train", "lr0", c.train.lr0),
        number("train", "lr_min_ratio", c.train.lr_min_ratio),
        number("train", "lambda_smooth", c.train.lambda_smooth),
        number("train", "noise_std", c.train.noise_std),
        number("train", "early_stop_patience", c.train.early_stop_patience),
        number("train", "window", c.train.window),
        number("train", "max_windows", c.train.max_windows),
        number("train", "val_fraction", c.train.val_fraction),
        flag("train", "resume", c.resume),

        text("infer", "geometry", c.infer.geometry),
        number("infer", "cylinder_radius", c.infer.cylinder_radius),
        number("infer", "cylinder_length", c.infer.cylinder_length),
        number("infer", "gaussians", c.infer.gaussians),
        {"infer", "modes", [&c](const std::string &v) { c.infer.modes = parse_modes(v); },
         [&c] { return modes_string(c.infer.modes); }},
        number("infer", "bend_axis_deg", c.infer.bend_axis_deg),
        number("infer", "twist_axis_deg", c.infer.twist_axis_deg),
        number("infer", "n_keyposes", c.infer.n_keyposes),
        number("infer", "n_interp", c.infer.n_interp),
        number("infer", "ema_beta", c.infer.ema_beta),
        flag("infer", "render", c.infer.render),

        number("render", "width", c.render.width),
        number("render", "height", c.render.height),
        number("render", "fov_deg", c.render.fov_deg),
        number("render", "tile_px", c.render.tile_px),
        number("render", "distance", c.render.distance),
        number("render", "azimuth_deg", c.render.azimuth_deg),
        number("render", "elevation_deg", c.render.elevation_deg),
        number("render", "exposure", c.render.exposure),
        number("render", "coarse_gaussians", c.render.coarse_gaussians),
        number("render", "high_gaussians", c.render.high_gaussians),

        number("eval", "voxel_mm", c.eval.voxel_mm),
        flag("eval", "ssim_luma", c.eval.ssim_luma),
        number("eval", "patch_size", c.eval.patch_size),
        number("eval", "image_width", c.eval.image_width),
        number("eval", "image_height", c.eval.image_height),

        text("serve", "host", c.serve.host),
        number("serve", "port", c.serve.port),
        text("serve", "preset", c.serve.preset),

        {"paths", "work", [&c](const std::string &v) { c.paths.work = trim(v); },
         [&c] { return c.paths.work.string(); }},
    };
    return f;
}

void require(bool ok, const std::string &what) {
    if (!ok) throw InvalidArgument("config: " + what);
}

} // namespace

SensorModel PipelineConfig::sensor_model() const {
    SensorModel m;
    m.rows = sensor.rows;
    m.cols = sensor.cols;
    m.gauge_factor = sensor.gauge_factor;
    m.strain_offset = sensor.strain_offset;
    m.adc = sensor.adc;
    m.adc_bits = sensor.adc_bits;
    m.divider_ref_ohm = sensor.r0_ohm;
    m.calibration = sensor.r0_spread > 0.0
                        ? CalibrationTable::with_spread(sensor.rows, sensor.cols, sensor.r0_ohm, sensor.r0_spread, seed())
                        : CalibrationTable::uniform(sensor.rows, sensor.cols, sensor.r0_ohm);
    return m;
}

DatasetOptions PipelineConfig::dataset_options() const {
    DatasetOptions o;
    o.max_magnitude = gen.max_magnitude_deg * std::numbers::pi / 180.0;
    o.sample_hz = sensor.sample_hz;
    o.noise_ohm = sensor.noise_ohm;
    o.anchor = gen.anchor;
    o.sensor = sensor_model();
    return o;
}

ModelConfig PipelineConfig::model_config(std::size_t node_count) const {
    ModelConfig m = model;
    m.grid_rows = sensor.rows;
    m.grid_cols = sensor.cols;
    m.node_count = m.architecture == Architecture::cage_gat ? node_count : 0;
    m.seed = seed();
    return m;
}

TrainConfig PipelineConfig::train_config() const {
    TrainConfig t = train;
    t.seed = seed();
    return t;
}

PipelineConfig parse_config(const std::string &text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error &e) {
        throw InvalidArgument("config: " + std::string(e.what()));
    }

    PipelineConfig cfg;
    const auto table = fields(cfg);
    std::set<std::string> sections;
    for (const auto &f : table) sections.insert(f.section);

    for (const auto &[section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw InvalidArgument("config: key '" + section + "' must live inside a [section]");
        if (!sections.count(section)) throw InvalidArgument("config: unknown section [" + section + "]");
        for (const auto &[key, value] : body) {
            const auto it = std::find_if(table.begin(), table.end(),
                                         [&](const Field &f) { return f.section == section && f.key == key; });
            if (it == table.end()) throw InvalidArgument("config: unknown key '" + section + "." + key + "'");
            try {
                it->set(value.data());
            } catch (const std::exception &e) {
                throw InvalidArgument("config: " + section + "." + key + ": " + e.what());
            }
        }
    }
    validate(cfg);
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_ini(const PipelineConfig &cfg) {
    PipelineConfig copy = cfg;
    std::ostringstream out;
    std::string section;
    for (const auto &f : fields(copy)) {
        if (f.section != section) {
            out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
            section = f.section;
        }
        out << f.key << " = " << f.get() << '\n';
    }
    return out.str();
}

void validate(const PipelineConfig &c) {
    require(c.scene.sheet_size > 0.0 && c.scene.sheet_thickness > 0.0, "scene extents must be positive");
    require(c.scene.gaussians >= 16, "scene.gaussians must be at least 16");
    require(c.scene.shape_factor > 0.0, "scene.shape_factor must be positive");
    require(c.scene.opacity > 0.0 && c.scene.opacity <= 1.0, "scene.opacity must lie in (0, 1]");
    for (int d : c.cage.dims) require(d >= 2, "cage.dims entries must be at least 2");
    require(c.cage.k >= 1, "cage.k must be at least 1");
    require(c.cage.epsilon >= 0.0, "cage.epsilon must be >= 0");
    require(c.cage.lambda_reg >= 0.0, "cage.lambda_reg must be >= 0");
    require(c.sensor.rows >= 3 && c.sensor.cols >= 3, "sensor grid must be at least 3x3");
    require(c.sensor.sample_hz > 0.0, "sensor.sample_hz must be positive");
    require(c.sensor.cutoff_hz > 0.0 && c.sensor.cutoff_hz < 0.5 * c.sensor.sample_hz,
            "sensor.cutoff_hz must lie in (0, sample_hz / 2)");
    require(c.sensor.noise_ohm >= 0.0, "sensor.noise_ohm must be >= 0");
    require(c.sensor.r0_ohm > 0.0, "sensor.r0_ohm must be positive");
    require(c.sensor.r0_spread >= 0.0 && c.sensor.r0_spread < c.sensor.r0_ohm, "sensor.r0_spread must lie in [0, r0_ohm)");
    require(c.sensor.adc_bits >= 4 && c.sensor.adc_bits <= 16, "sensor.adc_bits must lie in [4, 16]");
    require(!c.gen.modes.empty(), "gen.modes must not be empty");
    require(c.gen.n_axes >= 1 && c.gen.n_keyposes >= 2 && c.gen.n_interp >= 0, "gen counts out of range");
    require(c.gen.max_magnitude_deg > 0.0 && c.gen.max_magnitude_deg <= 180.0, "gen.max_magnitude_deg must lie in (0, 180]");
    require(c.gen.anchor >= 0.0 && c.gen.anchor <= 1.0, "gen.anchor must lie in [0, 1]");
    require(c.model.conv1_channels > 0 && c.model.conv2_channels > 0 && c.model.feature_dim > 0 &&
                c.model.time_bands > 0 && c.model.heads > 0 && c.model.hidden > 0,
            "model widths must be positive");
    require(c.model.coord_scale > 0.0, "model.coord_scale must be positive");
    require(c.direct_points >= 1, "model.direct_points must be at least 1");
    require(c.train.epochs >= 1 && c.train.lr0 > 0.0 && c.train.window >= 1, "train epochs, lr0 and window must be positive");
    require(c.train.lr_min_ratio >= 0.0 && c.train.lr_min_ratio <= 1.0, "train.lr_min_ratio must lie in [0, 1]");
    require(c.train.lambda_smooth >= 0.0 && c.train.noise_std >= 0.0, "train.lambda_smooth and noise_std must be >= 0");
    require(c.train.early_stop_patience >= 1, "train.early_stop_patience must be at least 1");
    require(c.train.val_fraction >= 0.0 && c.train.val_fraction < 1.0, "train.val_fraction must lie in [0, 1)");
    require(!c.infer.geometry.empty(), "infer.geometry must not be empty");
    require(c.infer.cylinder_radius > 0.0 && c.infer.cylinder_length > 0.0, "infer cylinder extents must be positive");
    require(c.infer.gaussians >= 16, "infer.gaussians must be at least 16");
    require(!c.infer.modes.empty(), "infer.modes must not be empty");
    require(c.infer.n_keyposes >= 2 && c.infer.n_interp >= 0, "infer stream counts out of range");
    require(c.infer.ema_beta >= 0.0 && c.infer.ema_beta < 1.0, "infer.ema_beta must lie in [0, 1)");
    require(c.render.width > 0 && c.render.height > 0, "render resolution must be positive");
    require(c.render.fov_deg > 0.0 && c.render.fov_deg < 180.0, "render.fov_deg must lie in (0, 180)");
    require(c.render.tile_px >= 8 && c.render.tile_px <= 64, "render.tile_px must lie in [8, 64]");
    require(c.render.distance > 0.0, "render.distance must be positive");
    require(c.render.exposure > 0.0, "render.exposure must be positive");
    require(c.render.coarse_gaussians >= 16 && c.render.high_gaussians >= 16, "render presets need at least 16 Gaussians");
    require(c.eval.voxel_mm > 0.0, "eval.voxel_mm must be positive");
    require(c.eval.patch_size > 0.0, "eval.patch_size must be positive");
    require(c.eval.image_width >= 11 && c.eval.image_height >= 11, "eval images must be at least 11x11 for SSIM");
    require(c.serve.port > 0 && c.serve.port < 65536, "serve.port must lie in [1, 65535]");
    require(c.serve.preset == "coarse" || c.serve.preset == "high", "serve.preset must be coarse or high");
}

} // namespace cagesplat

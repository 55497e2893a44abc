#include "sunet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sunet/errors.hpp"

namespace sunet {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(std::string_view v, const std::string& where) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(where + ": cannot parse '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where + ": expected a boolean, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

using Setter = std::function<void(PipelineConfig&, std::string_view, const std::string&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    t["synth.count"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.synth_count = parse_value<int>(v, w);
    };
    t["synth.format"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      if (v == "csv") c.synth_format = PointFormat::csv;
      else if (v == "bin") c.synth_format = PointFormat::bin;
      else throw ConfigError(w + ": expected csv or bin");
    };
    auto synth_double = [&t](const char* key, double SynthConfig::*field) {
      t[std::string("synth.") + key] = [field](PipelineConfig& c, std::string_view v, const std::string& w) {
        c.synth.*field = parse_value<double>(v, w);
      };
    };
    synth_double("extent_xy", &SynthConfig::extent_xy);
    synth_double("pylon_spacing", &SynthConfig::pylon_spacing);
    synth_double("pylon_height", &SynthConfig::pylon_height);
    synth_double("corridor_half_width", &SynthConfig::corridor_half_width);
    synth_double("catenary_sag", &SynthConfig::catenary_sag);
    synth_double("vegetation_density", &SynthConfig::vegetation_density);
    synth_double("ground_density", &SynthConfig::ground_density);
    t["synth.seed"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.synth.rng_seed = parse_value<std::uint64_t>(v, w);
    };

    t["grid.voxel_size"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.voxel_size = parse_value<double>(v, w);
    };
    t["grid.tile_dims"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw ConfigError(w + ": expected three comma-separated sizes");
      for (int i = 0; i < 3; ++i) c.run.tile_dims[i] = parse_value<int>(parts[i], w);
    };
    t["grid.features"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.feature_spec.clear();
      for (auto part : split_list(v)) {
        try {
          c.run.feature_spec.push_back(feature_from_string(part));
        } catch (const Error& e) {
          throw ConfigError(w + ": " + e.what());
        }
      }
    };

    t["model.levels"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.levels = parse_value<int>(v, w);
    };
    t["model.base_channels"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.base_channels = parse_value<int>(v, w);
    };
    t["model.bev_base_channels"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.bev_base_channels = parse_value<int>(v, w);
    };
    t["model.use_mfa"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.use_mfa = parse_bool(v, w);
    };
    t["model.use_fs"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.use_fs = parse_bool(v, w);
    };

    t["train.loss"] = [](PipelineConfig& c, std::string_view v, const std::string&) {
      c.run.loss = loss_from_string(v);
    };
    t["train.epochs"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.epochs = parse_value<int>(v, w);
    };
    t["train.frozen_bn_epochs"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.frozen_bn_epochs = parse_value<int>(v, w);
    };
    t["train.lr"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.lr = parse_value<double>(v, w);
    };
    t["train.seed"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.seed = parse_value<std::uint64_t>(v, w);
    };
    t["train.w_parent"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.w_parent = parse_value<double>(v, w);
    };
    t["train.w_child"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.run.w_child = parse_value<double>(v, w);
    };

    t["train2d.epochs"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.bev_epochs = parse_value<int>(v, w);
    };
    t["train2d.frozen_bn_epochs"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.bev_frozen_bn_epochs = parse_value<int>(v, w);
    };
    t["train2d.lr"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.bev_lr = parse_value<double>(v, w);
    };
    t["train2d.augment"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.bev_augment = parse_bool(v, w);
    };
    t["ablation.bev_epochs"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.ablation_bev_epochs = parse_value<int>(v, w);
    };
    t["render.pixel_size"] = [](PipelineConfig& c, std::string_view v, const std::string& w) {
      c.render_pixel_size = parse_value<double>(v, w);
    };
    return t;
  }();
  return table;
}

}  // namespace

void PipelineConfig::set_seed(std::uint64_t seed) {
  synth.rng_seed = seed;
  run.seed = seed;
}

void PipelineConfig::validate() const {
  synth.validate();
  if (synth_count < 1) throw ConfigError("synth.count must be >= 1");
  run.validate();
  if (bev_epochs < 1) throw ConfigError("train2d.epochs must be >= 1");
  if (bev_frozen_bn_epochs < 0 || bev_frozen_bn_epochs > bev_epochs) {
    throw ConfigError("train2d.frozen_bn_epochs must be within [0, train2d.epochs]");
  }
  if (!(bev_lr > 0.0)) throw ConfigError("train2d.lr must be > 0");
  if (ablation_bev_epochs < 1) throw ConfigError("ablation.bev_epochs must be >= 1");
  if (!(render_pixel_size > 0.0)) throw ConfigError("render.pixel_size must be > 0");
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  os << "[synth]\ncount = " << synth_count << "\nformat = " << (synth_format == PointFormat::bin ? "bin" : "csv")
     << "\nextent_xy = " << shortest(synth.extent_xy) << "\npylon_spacing = " << shortest(synth.pylon_spacing)
     << "\npylon_height = " << shortest(synth.pylon_height)
     << "\ncorridor_half_width = " << shortest(synth.corridor_half_width)
     << "\ncatenary_sag = " << shortest(synth.catenary_sag)
     << "\nvegetation_density = " << shortest(synth.vegetation_density)
     << "\nground_density = " << shortest(synth.ground_density) << "\nseed = " << synth.rng_seed << "\n\n";
  os << "[grid]\nvoxel_size = " << shortest(run.voxel_size) << "\ntile_dims = " << run.tile_dims[0] << ","
     << run.tile_dims[1] << "," << run.tile_dims[2] << "\nfeatures = ";
  for (std::size_t i = 0; i < run.feature_spec.size(); ++i) os << (i ? "," : "") << to_string(run.feature_spec[i]);
  os << "\n\n[model]\nlevels = " << run.levels << "\nbase_channels = " << run.base_channels
     << "\nbev_base_channels = " << run.bev_base_channels << "\nuse_mfa = " << (run.use_mfa ? "true" : "false")
     << "\nuse_fs = " << (run.use_fs ? "true" : "false") << "\n\n";
  os << "[train]\nloss = " << to_string(run.loss) << "\nepochs = " << run.epochs
     << "\nfrozen_bn_epochs = " << run.frozen_bn_epochs << "\nlr = " << shortest(run.lr) << "\nseed = " << run.seed
     << "\nw_parent = " << shortest(run.w_parent) << "\nw_child = " << shortest(run.w_child) << "\n\n";
  os << "[train2d]\nepochs = " << bev_epochs << "\nfrozen_bn_epochs = " << bev_frozen_bn_epochs
     << "\nlr = " << shortest(bev_lr) << "\naugment = " << (bev_augment ? "true" : "false") << "\n\n";
  os << "[ablation]\nbev_epochs = " << ablation_bev_epochs << "\n\n";
  os << "[render]\npixel_size = " << shortest(render_pixel_size) << "\n";
  return os.str();
}

PipelineConfig parse_config(std::string_view text, const std::string& source) {
  PipelineConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      bool known = false;
      for (const auto& [k, _] : setters()) known = known || k.compare(0, section.size() + 1, section + ".") == 0;
      if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside a section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + ": unknown key '" + key + "'");
    it->second(cfg, trim(line.substr(eq + 1)), where + " (" + key + ")");
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace sunet

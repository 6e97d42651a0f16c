#include "cellflow/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cellflow/error.hpp"

namespace cellflow::io {

namespace {

constexpr double kUnitTolerance = 1e-9;

json number_array(std::span<const double> v) {
  json a = json::array();
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput("cannot serialise a non-finite value");
    a.push_back(x);
  }
  return a;
}

const json& field(const json& j, const char* key, std::size_t line) {
  if (!j.is_object()) throw FormatError("record is not a JSON object", line);
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("missing field '") + key + "'", line);
  return *it;
}

template <class T>
T get(const json& j, const char* key, std::size_t line) {
  const json& v = field(j, key, line);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw FormatError(std::string("field '") + key + "' must be a number", line);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw FormatError(std::string("field '") + key + "' must be a boolean", line);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<long long>() >= 0))
        throw FormatError(std::string("field '") + key + "' must be a nonnegative integer", line);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw FormatError(std::string("field '") + key + "' must be a string", line);
    }
    return v.template get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("field '") + key + "': " + e.what(), line);
  }
}

std::vector<double> numbers(const json& v, const char* key, std::size_t line) {
  if (!v.is_array()) throw FormatError(std::string("field '") + key + "' must be an array of numbers", line);
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw FormatError(std::string("field '") + key + "' must be an array of numbers", line);
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<double> numbers(const json& j, const char* key, std::size_t line, std::size_t expect) {
  auto v = numbers(field(j, key, line), key, line);
  if (expect && v.size() != expect)
    throw FormatError(std::string("field '") + key + "' has " + std::to_string(v.size()) + " values, expected " +
                          std::to_string(expect),
                      line);
  return v;
}

std::vector<double> unit_vector(std::vector<double> v, const std::string& what, std::size_t line,
                                const WarningSink& warn) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (!(n > 0.0)) throw FormatError(what + " has zero norm", line);
  if (std::abs(n - 1.0) > kUnitTolerance) {
    for (auto& x : v) x /= n;
    if (warn) warn("line " + std::to_string(line) + ": " + what + " normalised on ingest (norm was " + std::to_string(n) + ")");
  }
  return v;
}

json header(const std::string& format, std::size_t records) {
  return json{{"format", format}, {"version", kFormatVersion}, {"records", records}};
}

/// Non-blank lines with their 1-based numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  bool next(json& out, std::size_t& line) {
    std::string text;
    while (std::getline(is_, text)) {
      ++line_;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out = json::parse(text);
      } catch (const json::parse_error& e) {
        throw FormatError(std::string("malformed JSON: ") + e.what(), line_);
      }
      line = line_;
      return true;
    }
    line = line_ + 1;
    return false;
  }

 private:
  std::istream& is_;
  std::size_t line_ = 0;
};

struct Document {
  json head;
  std::vector<std::pair<std::size_t, json>> records;
};

Document read_document(std::istream& is, const std::string& format) {
  LineReader reader(is);
  Document doc;
  std::size_t line = 0;
  if (!reader.next(doc.head, line)) throw FormatError("empty file, expected a " + format + " header", line);
  const auto fmt = get<std::string>(doc.head, "format", line);
  if (fmt != format) throw FormatError("expected format '" + format + "', found '" + fmt + "'", line);
  const auto version = get<std::size_t>(doc.head, "version", line);
  if (version != static_cast<std::size_t>(kFormatVersion))
    throw VersionError(format + " version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kFormatVersion) + ")");
  const auto n = get<std::size_t>(doc.head, "records", line);
  json rec;
  for (std::size_t i = 0; i < n; ++i) {
    if (!reader.next(rec, line))
      throw FormatError("truncated file: expected " + std::to_string(n) + " records, found " + std::to_string(i), line);
    doc.records.emplace_back(line, std::move(rec));
  }
  if (reader.next(rec, line)) throw FormatError("record beyond the declared count of " + std::to_string(n), line);
  return doc;
}

void emit(std::ostream& os, const json& j) { os << j.dump() << '\n'; }

json poi_json(const fusion::PoiSet& pois) {
  json a = json::array();
  for (const auto& p : pois.records) a.push_back({{"address", number_array(p.address)}, {"context", number_array(p.context)}});
  return a;
}

fusion::PoiSet poi_from_json(const json& j, std::size_t line, const WarningSink& warn) {
  fusion::PoiSet set;
  if (j.contains("radius_m")) set.radius_m = get<double>(j, "radius_m", line);
  const json& arr = field(j, "pois", line);
  if (!arr.is_array()) throw FormatError("field 'pois' must be an array", line);
  std::size_t dim = 0;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const std::string tag = "POI " + std::to_string(k);
    fusion::PoiRecord r;
    r.address = unit_vector(numbers(arr[k], "address", line, dim), tag + " address", line, warn);
    dim = r.address.size();
    r.context = unit_vector(numbers(arr[k], "context", line, dim), tag + " context", line, warn);
    set.records.push_back(std::move(r));
  }
  return set;
}

std::optional<std::vector<double>> visual_from_json(const json& j, std::size_t line, const WarningSink& warn) {
  auto it = j.find("visual");
  if (it == j.end() || it->is_null()) return std::nullopt;
  return unit_vector(numbers(*it, "visual", line), "visual embedding", line, warn);
}

json windows_json(const std::vector<ops::Interval>& w) {
  json a = json::array();
  for (const auto& i : w) a.push_back(json::array({i.start, i.end}));
  return a;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot read " + path.string());
  return is;
}

template <class F>
void save_with(const std::filesystem::path& path, F&& write) {
  std::ostringstream os;
  write(os);
  write_text_file(path, os.str());
}

void check_params(const nn::ParameterSet& stored, const nn::ParameterSet& layout) {
  for (const auto& [path, t] : layout.entries()) {
    if (!stored.contains(path)) throw FormatError("checkpoint lacks parameter " + path);
    if (!stored.at(path).same_shape(t)) throw FormatError("checkpoint parameter " + path + " has the wrong shape");
  }
  for (const auto& [path, t] : stored.entries())
    if (!layout.contains(path)) throw FormatError("checkpoint has unexpected parameter " + path);
}

}  // namespace

json to_json(const decomp::TrafficSeries& s) {
  return {{"site_id", s.site_id}, {"first_weekday", s.layout.first_weekday}, {"x", number_array(s.x)}};
}

json to_json(const TrafficRecord& r) {
  json j{{"site_id", r.series.site_id}, {"first_weekday", r.series.layout.first_weekday}};
  if (!r.zone.empty()) j["zone"] = r.zone;
  if (!r.split.empty()) j["split"] = r.split;
  if (r.seed) j["seed"] = *r.seed;
  j["x"] = number_array(r.series.x);
  if (r.parts) {
    j["d"] = number_array(r.parts->d_tar);
    j["w"] = number_array(r.parts->w_tar);
    j["u"] = number_array(r.parts->u_tar);
    j["r"] = number_array(r.parts->r_tar);
  }
  if (r.h_star) j["h_star"] = *r.h_star;
  return j;
}

TrafficRecord traffic_from_json(const json& j, std::size_t line) {
  TrafficRecord r;
  r.series.site_id = get<std::string>(j, "site_id", line);
  if (j.contains("first_weekday")) r.series.layout.first_weekday = get<std::size_t>(j, "first_weekday", line);
  if (r.series.layout.first_weekday >= decomp::kDaysPerWeek) throw FormatError("first_weekday must be in [0,7)", line);
  if (j.contains("zone")) r.zone = get<std::string>(j, "zone", line);
  if (j.contains("split")) {
    r.split = get<std::string>(j, "split", line);
    if (r.split != "train" && r.split != "test") throw FormatError("split must be 'train' or 'test'", line);
  }
  if (j.contains("seed")) r.seed = get<std::uint64_t>(j, "seed", line);
  r.series.x = numbers(j, "x", line, decomp::kHorizon);
  try {
    r.series.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(r.series.site_id + ": " + e.what(), line);
  }
  if (j.contains("d")) {
    decomp::DecompositionTargets p;
    p.d_tar = numbers(j, "d", line, decomp::kDailyTargetLen);
    p.w_tar = numbers(j, "w", line, decomp::kHoursPerWeek);
    p.u_tar = numbers(j, "u", line, decomp::kHorizon);
    p.r_tar = numbers(j, "r", line, decomp::kHorizon);
    r.parts = std::move(p);
  }
  if (j.contains("h_star") && !j["h_star"].is_null()) r.h_star = get<std::size_t>(j, "h_star", line);
  return r;
}

json to_json(const fusion::LocationInput& s) {
  json j{{"site_id", s.site_id}};
  j["visual"] = s.visual ? number_array(*s.visual) : json(nullptr);
  j["radius_m"] = s.pois.radius_m;
  j["pois"] = poi_json(s.pois);
  return j;
}

fusion::LocationInput location_from_json(const json& j, std::size_t line, const WarningSink& warn) {
  fusion::LocationInput s;
  s.site_id = get<std::string>(j, "site_id", line);
  s.visual = visual_from_json(j, line, warn);
  s.pois = poi_from_json(j, line, warn);
  return s;
}

json to_json(const corpus::GridCell& c) {
  json j{{"cell_id", c.cell_id}, {"latitude", c.latitude}, {"longitude", c.longitude}, {"feasible", c.feasible}};
  j["visual"] = c.visual ? number_array(*c.visual) : json(nullptr);
  j["radius_m"] = c.pois.radius_m;
  j["pois"] = poi_json(c.pois);
  return j;
}

corpus::GridCell grid_cell_from_json(const json& j, std::size_t line, const WarningSink& warn) {
  corpus::GridCell c;
  c.cell_id = get<std::string>(j, "cell_id", line);
  c.latitude = get<double>(j, "latitude", line);
  c.longitude = get<double>(j, "longitude", line);
  if (c.latitude < -90 || c.latitude > 90 || c.longitude < -180 || c.longitude > 180)
    throw FormatError(c.cell_id + ": coordinates out of range", line);
  c.feasible = j.contains("feasible") ? get<bool>(j, "feasible", line) : true;
  c.visual = visual_from_json(j, line, warn);
  c.pois = j.contains("pois") ? poi_from_json(j, line, warn) : fusion::PoiSet{};
  return c;
}

json to_json(const corpus::FleetSite& s) {
  return {{"site_id", s.site_id}, {"observed", number_array(s.observed)}, {"forecast", number_array(s.forecast)}};
}

corpus::FleetSite fleet_site_from_json(const json& j, std::size_t line) {
  corpus::FleetSite s;
  s.site_id = get<std::string>(j, "site_id", line);
  s.observed = numbers(j, "observed", line, 0);
  s.forecast = numbers(j, "forecast", line, s.observed.size());
  if (s.observed.empty()) throw FormatError(s.site_id + ": empty trace", line);
  for (double v : s.observed)
    if (v < 0.0) throw FormatError(s.site_id + ": negative observed load", line);
  return s;
}

json to_json(const metrics::EvaluationReport& r) {
  return {{"jsd", r.jsd},           {"jsd_diff", r.jsd_diff},       {"rmse", r.rmse},
          {"mae", r.mae},           {"sites", r.sites},             {"values", r.values},
          {"diff_values", r.diff_values}, {"bins", r.bins},         {"value_lo", r.value_lo},
          {"value_hi", r.value_hi}, {"diff_lo", r.diff_lo},         {"diff_hi", r.diff_hi},
          {"pooling", r.pooling}};
}

json to_json(const planning::RankingResult& r) {
  json entries = json::array();
  for (std::size_t i = 0; i < r.entries.size(); ++i)
    entries.push_back({{"rank", i + 1},
                       {"cell_id", r.entries[i].cell_id},
                       {"utility", r.utility},
                       {"value", r.entries[i].value},
                       {"seed", r.entries[i].seed}});
  return {{"utility", r.utility}, {"k", r.k},           {"run_seed", r.run_seed},
          {"candidates", r.candidates}, {"truncated", r.truncated}, {"entries", entries}};
}

json to_json(const ops::ControlPlan& p) {
  return {{"eta", p.eta}, {"qoe", p.qoe}, {"windows", windows_json(p.windows)}, {"rho_ctrl", number_array(p.rho_ctrl)}};
}

json to_json(const ops::SiteSimulation& s) {
  return {{"site_id", s.site_id},
          {"capacity", s.capacity},
          {"threshold", s.threshold},
          {"eta", s.plan.eta},
          {"qoe", s.plan.qoe},
          {"windows", windows_json(s.plan.windows)},
          {"rho_obs", number_array(s.rho_obs)},
          {"rho_ctrl", number_array(s.plan.rho_ctrl)}};
}

json to_json(const gen::GeneratedTraffic& g) {
  json j{{"x", number_array(g.x)}, {"d", number_array(g.d)}, {"w", number_array(g.w)},
         {"u", number_array(g.u)}, {"r", number_array(g.r)}};
  j["h_star"] = g.h_star ? json(*g.h_star) : json(nullptr);
  j["q"] = number_array(g.q);
  return j;
}

json to_json(const gen::GeneratorConfig& c) {
  json levels = json::array();
  for (const auto& l : c.levels)
    levels.push_back({{"level", l.level},
                      {"length", l.length},
                      {"steps", l.steps},
                      {"clip", l.clip},
                      {"flow_weight", l.flow_weight},
                      {"init_noise", l.init_noise},
                      {"train_draws", l.train_draws}});
  return {{"context_dim", c.context_dim},
          {"hidden", c.hidden},
          {"time_features", c.time_features},
          {"levels", levels},
          {"aux",
           {{"bnd", c.aux.bnd}, {"tmp", c.aux.tmp}, {"per", c.aux.per}, {"bias", c.aux.bias},
            {"peak", c.aux.peak}, {"corr", c.aux.corr}}},
          {"train_sampling_steps", c.train_sampling_steps},
          {"peak_head", c.peak_head},
          {"gated_skip", c.gated_skip},
          {"batch", c.batch},
          {"lr", c.lr},
          {"lr_final", c.lr_final}};
}

gen::GeneratorConfig generator_config_from_json(const json& j) {
  gen::GeneratorConfig c;
  c.context_dim = get<std::size_t>(j, "context_dim", 0);
  c.hidden = get<std::size_t>(j, "hidden", 0);
  c.time_features = get<std::size_t>(j, "time_features", 0);
  const json& levels = field(j, "levels", 0);
  if (!levels.is_array() || levels.size() != gen::kLevels) throw FormatError("generator config needs three levels");
  for (std::size_t i = 0; i < gen::kLevels; ++i) {
    const json& l = levels[i];
    auto& lc = c.levels[i];
    lc.level = static_cast<int>(get<std::size_t>(l, "level", 0));
    lc.length = get<std::size_t>(l, "length", 0);
    lc.steps = get<std::size_t>(l, "steps", 0);
    lc.clip = get<double>(l, "clip", 0);
    lc.flow_weight = get<double>(l, "flow_weight", 0);
    lc.init_noise = get<double>(l, "init_noise", 0);
    lc.train_draws = get<std::size_t>(l, "train_draws", 0);
  }
  const json& aux = field(j, "aux", 0);
  c.aux = {get<double>(aux, "bnd", 0), get<double>(aux, "tmp", 0),  get<double>(aux, "per", 0),
           get<double>(aux, "bias", 0), get<double>(aux, "peak", 0), get<double>(aux, "corr", 0)};
  c.train_sampling_steps = get<std::size_t>(j, "train_sampling_steps", 0);
  c.peak_head = get<bool>(j, "peak_head", 0);
  c.gated_skip = get<bool>(j, "gated_skip", 0);
  c.batch = get<std::size_t>(j, "batch", 0);
  c.lr = get<double>(j, "lr", 0);
  c.lr_final = get<double>(j, "lr_final", 0);
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("generator config: ") + e.what());
  }
  return c;
}

json to_json(const fusion::FusionConfig& c) {
  return {{"dim", c.dim},       {"poi_dim", c.poi_dim}, {"score_hidden", c.score_hidden},
          {"pool_hidden", c.pool_hidden}, {"ffn", c.ffn}, {"mask_prob", c.mask_prob},
          {"batch", c.batch},   {"lr", c.lr}};
}

fusion::FusionConfig fusion_config_from_json(const json& j) {
  fusion::FusionConfig c;
  c.dim = get<std::size_t>(j, "dim", 0);
  c.poi_dim = get<std::size_t>(j, "poi_dim", 0);
  c.score_hidden = get<std::size_t>(j, "score_hidden", 0);
  c.pool_hidden = get<std::size_t>(j, "pool_hidden", 0);
  c.ffn = get<std::size_t>(j, "ffn", 0);
  c.mask_prob = get<double>(j, "mask_prob", 0);
  c.batch = get<std::size_t>(j, "batch", 0);
  c.lr = get<double>(j, "lr", 0);
  return c;
}

void write_traffic(std::ostream& os, const TrafficFile& f) {
  json h = header("cellflow.traffic", f.records.size());
  h["scale"] = f.scale;
  h["offset"] = f.offset;
  if (f.seed) h["seed"] = *f.seed;
  h["generated"] = f.generated;
  emit(os, h);
  for (const auto& r : f.records) emit(os, to_json(r));
}

TrafficFile read_traffic(std::istream& is) {
  auto doc = read_document(is, "cellflow.traffic");
  TrafficFile f;
  f.scale = get<double>(doc.head, "scale", 1);
  f.offset = get<double>(doc.head, "offset", 1);
  if (!(f.scale > 0.0)) throw FormatError("scale must be > 0", 1);
  if (doc.head.contains("seed")) f.seed = get<std::uint64_t>(doc.head, "seed", 1);
  if (doc.head.contains("generated")) f.generated = get<bool>(doc.head, "generated", 1);
  for (const auto& [line, rec] : doc.records) f.records.push_back(traffic_from_json(rec, line));
  return f;
}

void write_embeddings(std::ostream& os, const EmbeddingFile& f) {
  json h = header("cellflow.embeddings", f.sites.size());
  h["dim"] = f.dim;
  h["poi_dim"] = f.poi_dim;
  emit(os, h);
  for (const auto& s : f.sites) emit(os, to_json(s));
}

EmbeddingFile read_embeddings(std::istream& is, const WarningSink& warn) {
  auto doc = read_document(is, "cellflow.embeddings");
  EmbeddingFile f;
  f.dim = get<std::size_t>(doc.head, "dim", 1);
  f.poi_dim = get<std::size_t>(doc.head, "poi_dim", 1);
  for (const auto& [line, rec] : doc.records) {
    auto s = location_from_json(rec, line, warn);
    if (s.visual && s.visual->size() != f.dim) throw FormatError(s.site_id + ": visual vector has the wrong width", line);
    for (const auto& p : s.pois.records)
      if (p.address.size() != f.poi_dim) throw FormatError(s.site_id + ": POI vector has the wrong width", line);
    f.sites.push_back(std::move(s));
  }
  return f;
}

void write_grid(std::ostream& os, const std::vector<corpus::GridCell>& grid) {
  emit(os, header("cellflow.grid", grid.size()));
  for (const auto& c : grid) emit(os, to_json(c));
}

std::vector<corpus::GridCell> read_grid(std::istream& is, const WarningSink& warn) {
  auto doc = read_document(is, "cellflow.grid");
  std::vector<corpus::GridCell> out;
  for (const auto& [line, rec] : doc.records) out.push_back(grid_cell_from_json(rec, line, warn));
  return out;
}

void write_fleet(std::ostream& os, const std::vector<corpus::FleetSite>& fleet) {
  emit(os, header("cellflow.fleet", fleet.size()));
  for (const auto& s : fleet) emit(os, to_json(s));
}

std::vector<corpus::FleetSite> read_fleet(std::istream& is) {
  auto doc = read_document(is, "cellflow.fleet");
  std::vector<corpus::FleetSite> out;
  for (const auto& [line, rec] : doc.records) out.push_back(fleet_site_from_json(rec, line));
  return out;
}

void write_decomposition(std::ostream& os, const std::vector<DecompositionRecord>& recs) {
  emit(os, header("cellflow.decomposition", recs.size()));
  for (const auto& r : recs)
    emit(os, {{"site_id", r.site_id},
              {"d_tar", number_array(r.targets.d_tar)},
              {"w_tar", number_array(r.targets.w_tar)},
              {"u_tar", number_array(r.targets.u_tar)},
              {"r_tar", number_array(r.targets.r_tar)}});
}

std::vector<DecompositionRecord> read_decomposition(std::istream& is) {
  auto doc = read_document(is, "cellflow.decomposition");
  std::vector<DecompositionRecord> out;
  for (const auto& [line, rec] : doc.records) {
    DecompositionRecord r;
    r.site_id = get<std::string>(rec, "site_id", line);
    r.targets.d_tar = numbers(rec, "d_tar", line, decomp::kDailyTargetLen);
    r.targets.w_tar = numbers(rec, "w_tar", line, decomp::kHoursPerWeek);
    r.targets.u_tar = numbers(rec, "u_tar", line, decomp::kHorizon);
    r.targets.r_tar = numbers(rec, "r_tar", line, decomp::kHorizon);
    out.push_back(std::move(r));
  }
  return out;
}

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  json h = header("cellflow.checkpoint", c.params.entries().size());
  h["version"] = c.version;
  h["kind"] = c.kind;
  h["config"] = c.config;
  h["seed"] = c.seed;
  h["train_seed"] = c.train_seed;
  h["epochs"] = c.epochs;
  h["trained"] = c.trained;
  emit(os, h);
  for (const auto& [path, t] : c.params.entries())
    emit(os, {{"path", path}, {"shape", json::array({t.rows(), t.cols()})}, {"values", number_array(t.values())}});
}

Checkpoint read_checkpoint(std::istream& is) {
  auto doc = read_document(is, "cellflow.checkpoint");
  Checkpoint c;
  c.kind = get<std::string>(doc.head, "kind", 1);
  if (c.kind != "fusion" && c.kind != "generator") throw FormatError("unknown checkpoint kind '" + c.kind + "'", 1);
  c.config = field(doc.head, "config", 1);
  c.seed = get<std::uint64_t>(doc.head, "seed", 1);
  c.train_seed = get<std::uint64_t>(doc.head, "train_seed", 1);
  c.epochs = get<std::size_t>(doc.head, "epochs", 1);
  c.trained = get<bool>(doc.head, "trained", 1);
  c.params.seed = c.seed;
  for (const auto& [line, rec] : doc.records) {
    const auto path = get<std::string>(rec, "path", line);
    const json& shape = field(rec, "shape", line);
    if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() || !shape[1].is_number_unsigned())
      throw FormatError(path + ": shape must be [rows, cols]", line);
    const auto rows = shape[0].get<std::size_t>(), cols = shape[1].get<std::size_t>();
    auto values = numbers(rec, "values", line, 0);
    if (values.size() != rows * cols) throw FormatError(path + ": value count does not match the shape", line);
    if (c.params.contains(path)) throw FormatError("duplicate parameter " + path, line);
    c.params.add(path, nn::Tensor(rows, cols, std::move(values)));
  }
  return c;
}

Checkpoint to_checkpoint(const gen::GeneratorModel& m) {
  return {"generator", kFormatVersion, to_json(m.config), m.params.seed, m.train_seed, m.epochs, m.trained, m.params};
}

Checkpoint to_checkpoint(const fusion::FusionModel& m) {
  return {"fusion", kFormatVersion, to_json(m.config), m.params.seed, m.train_seed, m.epochs, m.trained, m.params};
}

gen::GeneratorModel generator_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "generator") throw FormatError("expected a generator checkpoint, found '" + c.kind + "'");
  auto m = gen::init_generator(generator_config_from_json(c.config), c.seed);
  check_params(c.params, m.params);
  m.params = c.params;
  m.trained = c.trained;
  m.epochs = c.epochs;
  m.train_seed = c.train_seed;
  return m;
}

fusion::FusionModel fusion_from_checkpoint(const Checkpoint& c) {
  if (c.kind != "fusion") throw FormatError("expected a fusion checkpoint, found '" + c.kind + "'");
  fusion::FusionModel m;
  try {
    m = fusion::init_fusion(fusion_config_from_json(c.config), c.seed);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("fusion config: ") + e.what());
  }
  check_params(c.params, m.params);
  m.params = c.params;
  m.trained = c.trained;
  m.epochs = c.epochs;
  m.train_seed = c.train_seed;
  return m;
}

void write_report(std::ostream& os, const ReportFile& r) {
  emit(os, header("cellflow.report", 1));
  json j = to_json(r.report);
  j["peak_accuracy"] = r.peak_accuracy ? json(*r.peak_accuracy) : json(nullptr);
  j["peak_sites"] = r.peak_sites;
  emit(os, j);
}

ReportFile read_report(std::istream& is) {
  auto doc = read_document(is, "cellflow.report");
  if (doc.records.size() != 1) throw FormatError("a report holds exactly one record", 1);
  const auto& [line, j] = doc.records[0];
  ReportFile r;
  auto& m = r.report;
  m.jsd = get<double>(j, "jsd", line);
  m.jsd_diff = get<double>(j, "jsd_diff", line);
  m.rmse = get<double>(j, "rmse", line);
  m.mae = get<double>(j, "mae", line);
  m.sites = get<std::size_t>(j, "sites", line);
  m.values = get<std::size_t>(j, "values", line);
  m.diff_values = get<std::size_t>(j, "diff_values", line);
  m.bins = get<std::size_t>(j, "bins", line);
  m.value_lo = get<double>(j, "value_lo", line);
  m.value_hi = get<double>(j, "value_hi", line);
  m.diff_lo = get<double>(j, "diff_lo", line);
  m.diff_hi = get<double>(j, "diff_hi", line);
  m.pooling = get<std::string>(j, "pooling", line);
  if (j.contains("peak_accuracy") && !j["peak_accuracy"].is_null()) r.peak_accuracy = get<double>(j, "peak_accuracy", line);
  r.peak_sites = get<std::size_t>(j, "peak_sites", line);
  return r;
}

void write_ranking(std::ostream& os, const planning::RankingResult& r) {
  json h = header("cellflow.ranking", r.entries.size());
  h["utility"] = r.utility;
  h["k"] = r.k;
  h["run_seed"] = r.run_seed;
  h["candidates"] = r.candidates;
  h["truncated"] = r.truncated;
  emit(os, h);
  const json body = to_json(r);
  for (const auto& e : body["entries"]) emit(os, e);
}

planning::RankingResult read_ranking(std::istream& is) {
  auto doc = read_document(is, "cellflow.ranking");
  planning::RankingResult r;
  r.utility = get<std::string>(doc.head, "utility", 1);
  r.k = get<std::size_t>(doc.head, "k", 1);
  r.run_seed = get<std::uint64_t>(doc.head, "run_seed", 1);
  r.candidates = get<std::size_t>(doc.head, "candidates", 1);
  r.truncated = get<bool>(doc.head, "truncated", 1);
  for (const auto& [line, rec] : doc.records) {
    if (get<std::size_t>(rec, "rank", line) != r.entries.size() + 1) throw FormatError("ranks must run 1, 2, ...", line);
    r.entries.push_back({get<std::string>(rec, "cell_id", line), get<double>(rec, "value", line),
                         get<std::uint64_t>(rec, "seed", line)});
  }
  return r;
}

void write_ops(std::ostream& os, const OpsFile& f) {
  const auto& sim = f.simulation;
  json h = header("cellflow.ops", sim.sites.size());
  h["window"] = sim.params.window;
  h["sigma_multiple"] = sim.params.sigma_multiple;
  h["threshold"] = sim.params.threshold ? json(*sim.params.threshold) : json(nullptr);
  h["eta"] = sim.eta;
  h["qoe"] = sim.qoe;
  json sweep = json::array();
  for (const auto& p : f.sweep) sweep.push_back({{"sigma_multiple", p.sigma_multiple}, {"eta", p.eta}, {"qoe", p.qoe}});
  h["sweep"] = sweep;
  emit(os, h);
  for (const auto& s : sim.sites) emit(os, to_json(s));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    auto os = open_out(tmp);
    os << text;
    if (!os.flush()) throw InvalidInput("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrafficFile load_traffic(const std::filesystem::path& p) {
  auto is = open_in(p);
  return read_traffic(is);
}
EmbeddingFile load_embeddings(const std::filesystem::path& p, const WarningSink& warn) {
  auto is = open_in(p);
  return read_embeddings(is, warn);
}
std::vector<corpus::GridCell> load_grid(const std::filesystem::path& p, const WarningSink& warn) {
  auto is = open_in(p);
  return read_grid(is, warn);
}
std::vector<corpus::FleetSite> load_fleet(const std::filesystem::path& p) {
  auto is = open_in(p);
  return read_fleet(is);
}
Checkpoint load_checkpoint(const std::filesystem::path& p) {
  auto is = open_in(p);
  return read_checkpoint(is);
}
planning::RankingResult load_ranking(const std::filesystem::path& p) {
  auto is = open_in(p);
  return read_ranking(is);
}
ReportFile load_report(const std::filesystem::path& p) {
  auto is = open_in(p);
  return read_report(is);
}

void save_traffic(const std::filesystem::path& p, const TrafficFile& f) {
  save_with(p, [&](std::ostream& os) { write_traffic(os, f); });
}
void save_embeddings(const std::filesystem::path& p, const EmbeddingFile& f) {
  save_with(p, [&](std::ostream& os) { write_embeddings(os, f); });
}
void save_grid(const std::filesystem::path& p, const std::vector<corpus::GridCell>& g) {
  save_with(p, [&](std::ostream& os) { write_grid(os, g); });
}
void save_fleet(const std::filesystem::path& p, const std::vector<corpus::FleetSite>& f) {
  save_with(p, [&](std::ostream& os) { write_fleet(os, f); });
}
void save_decomposition(const std::filesystem::path& p, const std::vector<DecompositionRecord>& r) {
  save_with(p, [&](std::ostream& os) { write_decomposition(os, r); });
}
void save_checkpoint(const std::filesystem::path& p, const Checkpoint& c) {
  save_with(p, [&](std::ostream& os) { write_checkpoint(os, c); });
}
void save_report(const std::filesystem::path& p, const ReportFile& r) {
  save_with(p, [&](std::ostream& os) { write_report(os, r); });
}
void save_ranking(const std::filesystem::path& p, const planning::RankingResult& r) {
  save_with(p, [&](std::ostream& os) { write_ranking(os, r); });
}
void save_ops(const std::filesystem::path& p, const OpsFile& f) {
  save_with(p, [&](std::ostream& os) { write_ops(os, f); });
}

}  // namespace cellflow::io

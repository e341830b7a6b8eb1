// SPDX-License-Identifier: Apache-2.0
#include "karn/checkpoint.hpp"

#include "karn/errors.hpp"
#include "karn/training.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace karn {

void TensorArchive::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta)
    if (k == key) {
      v = value;
      return;
    }
  meta.emplace_back(key, value);
}

bool TensorArchive::has(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return true;
  return false;
}

const std::string& TensorArchive::get(const std::string& key) const {
  for (const auto& kv : meta)
    if (kv.first == key) return kv.second;
  throw DataError("archive is missing field '" + key + "'");
}

void TensorArchive::add_tensor(const std::string& name, Eigen::MatrixXd value) {
  if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos)
    throw std::invalid_argument("tensor name '" + name + "' must be non-empty without whitespace");
  if (has_tensor(name)) throw std::invalid_argument("duplicate tensor '" + name + "'");
  tensors.emplace_back(name, std::move(value));
}

bool TensorArchive::has_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.first == name) return true;
  return false;
}

const Eigen::MatrixXd& TensorArchive::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.first == name) return t.second;
  throw DataError("archive is missing tensor '" + name + "'");
}

void write_archive(std::ostream& out, const TensorArchive& archive) {
  out << kContainerMagic << "\n" << "format_version " << kFormatVersion << "\n";
  for (const auto& [k, v] : archive.meta) {
    if (k.empty() || k.find_first_of(" \t\r\n") != std::string::npos || v.find_first_of("\r\n") != std::string::npos)
      throw std::invalid_argument("archive field '" + k + "' cannot be written");
    out << k << " " << v << "\n";
  }
  std::uint64_t offset = 0;
  for (const auto& [name, value] : archive.tensors) {
    out << "tensor " << name << " " << value.rows() << " " << value.cols() << " " << offset << "\n";
    offset += static_cast<std::uint64_t>(value.size()) * 8;
  }
  out << "end\n";
  std::string bytes;
  bytes.reserve(offset);
  for (const auto& t : archive.tensors) {
    const Eigen::MatrixXd& m = t.second;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(m.data()[i]);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed to write archive");
}

TensorArchive read_archive(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line != kContainerMagic)
    throw DataError(source + ": not a karnlf container (bad magic)");
  TensorArchive a;
  struct Entry {
    std::string name;
    Eigen::Index rows, cols;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  bool ended = false;
  int version = -1;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? std::string() : line.substr(sp + 1);
    if (key == "format_version") {
      version = std::stoi(value);
    } else if (key == "tensor") {
      std::istringstream ss(value);
      Entry e{};
      if (!(ss >> e.name >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0)
        throw DataError(source + ": malformed tensor line '" + line + "'");
      entries.push_back(e);
    } else {
      a.meta.emplace_back(key, value);
    }
  }
  if (!ended) throw DataError(source + ": truncated manifest");
  if (version != kFormatVersion)
    throw DataError(source + ": unsupported format_version " + std::to_string(version));
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const Entry& e : entries) {
    const std::uint64_t n = static_cast<std::uint64_t>(e.rows) * static_cast<std::uint64_t>(e.cols);
    if (e.offset + n * 8 > payload.size()) throw DataError(source + ": payload too short for '" + e.name + "'");
    Eigen::MatrixXd m(e.rows, e.cols);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[e.offset + i * 8 + b])) << (8 * b);
      m.data()[i] = std::bit_cast<double>(bits);
    }
    a.tensors.emplace_back(e.name, std::move(m));
  }
  return a;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    write_archive(out, archive);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return read_archive(in, path.string());
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (int x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

int get_int(const TensorArchive& a, const std::string& key) {
  try {
    return std::stoi(a.get(key));
  } catch (const std::logic_error&) {
    throw DataError("archive field '" + key + "' is not an integer");
  }
}

void put_spec(TensorArchive& a, const std::vector<Feature>& features, const WindowSpec& spec) {
  a.set("features", feature_set_string(features));
  a.set("window", std::to_string(spec.window));
  a.set("horizon", std::to_string(spec.horizon));
  a.set("stride", std::to_string(spec.stride));
}

WindowSpec get_spec(const TensorArchive& a) {
  return WindowSpec{get_int(a, "window"), get_int(a, "horizon"), get_int(a, "stride")};
}

void put_scaler(TensorArchive& a, const ScalerParams& s) {
  a.add_tensor("scaler.min", s.min);
  a.add_tensor("scaler.max", s.max);
}

ScalerParams get_scaler(const TensorArchive& a) {
  return ScalerParams{a.tensor("scaler.min").col(0), a.tensor("scaler.max").col(0)};
}

void require_kind(const TensorArchive& a, const std::string& kind) {
  if (a.get("kind") != kind) throw DataError("archive holds a " + a.get("kind") + ", expected a " + kind);
}

}  // namespace

TensorArchive to_archive(const Checkpoint& cp) {
  TensorArchive a;
  a.set("kind", "model");
  a.set("model", to_string(kind_of(cp.model)));
  a.set("input_dim", std::to_string(input_dim_of(cp.model)));
  a.set("output_horizon", std::to_string(horizon_of(cp.model)));
  a.set("dataset", cp.dataset_id.empty() ? "-" : cp.dataset_id);
  a.set("config_hash", cp.config_hash.empty() ? "-" : cp.config_hash);
  put_spec(a, cp.features, cp.spec);

  if (const auto* k = std::get_if<KarnNetwork>(&cp.model)) {
    std::vector<int> hidden;
    for (int l = 0; l < k->layer_count(); ++l) hidden.push_back(k->layout(l).hidden_dim);
    a.set("hidden_sizes", join_ints(hidden));
    a.set("spline_degree", std::to_string(k->config().degree));
    a.set("head_mode", k->head_mode() == HeadMode::last_state ? "last_state" : "per_step");
    for (int l = 0; l < k->layer_count(); ++l) {
      const KnotGridd& g = k->layout(l).grid;
      a.set("grid." + std::to_string(l) + ".interior_count", std::to_string(g.interior_count));
      a.add_tensor("grid." + std::to_string(l) + ".range", Eigen::Vector2d(g.range_lo, g.range_hi));
      a.add_tensor("grid." + std::to_string(l) + ".knots", g.knots);
    }
    a.set("lock_groups", std::to_string(k->lock_groups().size()));
    for (std::size_t i = 0; i < k->lock_groups().size(); ++i) {
      const LockGroup& lg = k->lock_groups()[i];
      std::string edges = std::to_string(lg.layer);
      for (const Edge& e : lg.edges) edges += " " + std::to_string(e.first) + ":" + std::to_string(e.second);
      a.set("lock." + std::to_string(i), edges);
    }
  } else {
    const auto& b = std::get<RecurrentBaseline>(cp.model);
    std::vector<int> hidden;
    for (int l = 0; l < b.layer_count(); ++l) hidden.push_back(b.layout(l).hidden_dim);
    a.set("hidden_sizes", join_ints(hidden));
  }

  std::string frozen;
  for (const ParameterEntry& e : parameters(cp.model))
    if (!e.trainable) frozen += (frozen.empty() ? "" : ",") + e.name;
  a.set("frozen", frozen.empty() ? "-" : frozen);

  std::istringstream cfg(cp.config_text);
  std::string line;
  while (std::getline(cfg, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) a.set("config." + line.substr(0, eq), line.substr(eq + 1));
  }

  put_scaler(a, cp.scaler);
  for (const ParameterEntry& e : parameters(cp.model)) a.add_tensor("param." + e.name, e.value);
  return a;
}

Checkpoint checkpoint_from_archive(const TensorArchive& a) {
  require_kind(a, "model");
  Checkpoint cp{KarnNetwork(KarnConfig{}, 0), {}, {}, {}, {}, {}, {}};
  const ModelKind kind = [&] {
    try {
      return parse_model_kind(a.get("model"));
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
  }();
  const std::vector<int> hidden = split_ints(a.get("hidden_sizes"));
  const int input_dim = get_int(a, "input_dim");
  const int horizon = get_int(a, "output_horizon");

  if (kind == ModelKind::karn) {
    KarnConfig c;
    c.input_dim = input_dim;
    c.hidden_sizes = hidden;
    c.horizon = horizon;
    c.degree = get_int(a, "spline_degree");
    c.grid_points = get_int(a, "grid.0.interior_count");
    const Eigen::MatrixXd& r0 = a.tensor("grid.0.range");
    c.range_lo = r0(0);
    c.range_hi = r0(1);
    c.head_mode = a.get("head_mode") == "per_step" ? HeadMode::per_step : HeadMode::last_state;
    KarnNetwork net(c, 0);
    for (int l = 0; l < net.layer_count(); ++l) {
      const std::string p = "grid." + std::to_string(l);
      KnotGridd g;
      g.degree = c.degree;
      g.interior_count = get_int(a, p + ".interior_count");
      g.range_lo = a.tensor(p + ".range")(0);
      g.range_hi = a.tensor(p + ".range")(1);
      g.knots = a.tensor(p + ".knots").col(0);
      if (g.knots.size() != g.interior_count + 2 * g.degree + 1)
        throw DataError("grid " + std::to_string(l) + " knot count does not match its interval count");
      if (!(g == net.layout(l).grid)) {
        const KarnLayerLayout& lay = net.layout(l);
        net.replace_grid(l, g, Eigen::MatrixXd::Zero(lay.hidden_dim, lay.input_dim * g.basis_count()));
      }
    }
    const int locks = get_int(a, "lock_groups");
    for (int i = 0; i < locks; ++i) {
      std::istringstream ss(a.get("lock." + std::to_string(i)));
      int layer = 0;
      ss >> layer;
      std::vector<Edge> edges;
      std::string tok;
      while (ss >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw DataError("malformed lock edge '" + tok + "'");
        edges.emplace_back(std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1)));
      }
      lock_edges(net, layer, edges);
    }
    cp.model = std::move(net);
  } else {
    BaselineConfig b;
    b.cell = cell_of(kind);
    b.input_dim = input_dim;
    b.hidden_sizes = hidden;
    b.horizon = horizon;
    cp.model = RecurrentBaseline(b, 0);
  }

  ParameterSet& params = parameters(cp.model);
  std::size_t stored = 0;
  for (const auto& t : a.tensors)
    if (t.first.rfind("param.", 0) == 0) ++stored;
  if (stored != params.size())
    throw DataError("checkpoint holds " + std::to_string(stored) + " parameter tensors, architecture needs " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd& v = a.tensor("param." + params[i].name);
    if (v.rows() != params[i].value.rows() || v.cols() != params[i].value.cols())
      throw DataError("parameter '" + params[i].name + "' has the wrong shape");
    params[i].value = v;
  }
  const std::string& frozen = a.get("frozen");
  if (frozen != "-") {
    std::stringstream ss(frozen);
    std::string name;
    while (std::getline(ss, name, ',')) params.set_trainable(params.index_of(name), false);
  }

  cp.features = parse_feature_set(a.get("features"));
  cp.spec = get_spec(a);
  cp.scaler = get_scaler(a);
  cp.dataset_id = a.get("dataset");
  cp.config_hash = a.get("config_hash");
  for (const auto& [k, v] : a.meta)
    if (k.rfind("config.", 0) == 0) cp.config_text += k.substr(7) + "=" + v + "\n";
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) { save_archive(path, to_archive(cp)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_archive(load_archive(path)); }

TensorArchive dataset_to_archive(const PreparedDataset& d) {
  TensorArchive a;
  a.set("kind", "dataset");
  a.set("source", d.source.empty() ? "-" : d.source);
  put_spec(a, d.features, d.spec);
  a.set("train_end", std::to_string(d.bounds.train_end));
  a.set("val_end", std::to_string(d.bounds.val_end));
  a.set("total", std::to_string(d.bounds.total));
  Eigen::VectorXd hours(static_cast<Eigen::Index>(d.timestamps.size()));
  Eigen::VectorXd flags(hours.size());
  for (Eigen::Index i = 0; i < hours.size(); ++i) {
    hours(i) = static_cast<double>(d.timestamps[static_cast<std::size_t>(i)].time_since_epoch().count());
    flags(i) = d.interpolated[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  }
  a.add_tensor("timestamps", hours);
  a.add_tensor("interpolated", flags);
  a.add_tensor("raw", d.raw);
  put_scaler(a, d.scaler);
  return a;
}

PreparedDataset dataset_from_archive(const TensorArchive& a) {
  require_kind(a, "dataset");
  PreparedDataset d;
  d.source = a.get("source");
  d.features = parse_feature_set(a.get("features"));
  d.load_row = static_cast<int>(std::find(d.features.begin(), d.features.end(), Feature::load) - d.features.begin());
  d.spec = get_spec(a);
  d.bounds = SplitBounds{get_int(a, "train_end"), get_int(a, "val_end"), get_int(a, "total")};
  const Eigen::MatrixXd& hours = a.tensor("timestamps");
  const Eigen::MatrixXd& flags = a.tensor("interpolated");
  for (Eigen::Index i = 0; i < hours.size(); ++i) {
    d.timestamps.push_back(HourPoint{std::chrono::hours{static_cast<std::int64_t>(hours(i))}});
    d.interpolated.push_back(flags(i) != 0.0);
  }
  d.raw = a.tensor("raw");
  d.scaler = get_scaler(a);
  if (d.raw.rows() != static_cast<Eigen::Index>(d.features.size()) || d.raw.cols() != hours.size())
    throw DataError("dataset cache tensors are inconsistent");
  d.splits = split_and_window(apply_scaler(d.scaler, d.raw), d.load_row, d.bounds, d.spec, d.interpolated);
  return d;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

}  // namespace karn

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "metarange/errors.hpp"
#include "metarange/matrix.hpp"
#include "metarange/prng.hpp"
#include "metarange/textio.hpp"

// Synthetic few-shot task universes: Gaussian class clusters on disk as
// manifest.txt + data.csv, split into disjoint train/val/test class pools,
// sampled into episodes (support pool + query set).

namespace metarange {

struct ClassDescriptor {
  int class_id = 0;
  int example_count = 0;
};

struct DatasetManifest {
  std::string name;
  int dim = 0;
  std::vector<ClassDescriptor> classes;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1) throw ArgumentError("manifest: dim must be >= 1");
    if (classes.empty()) throw ArgumentError("manifest: no classes");
    for (std::size_t k = 0; k < classes.size(); ++k) {
      if (classes[k].class_id != static_cast<int>(k))
        throw ArgumentError("manifest: class_ids must be contiguous from 0");
      if (classes[k].example_count < 1)
        throw ArgumentError("manifest: every example_count must be >= 1");
    }
  }
};

struct ClassSplit {
  std::vector<int> train_classes;
  std::vector<int> val_classes;
  std::vector<int> test_classes;

  const std::vector<int>& part(const std::string& name) const {
    if (name == "train") return train_classes;
    if (name == "val") return val_classes;
    if (name == "test") return test_classes;
    throw ArgumentError("split part must be train, val or test: '" + name + "'");
  }
};

struct EpisodeShape {
  int way = 0;         // K
  int shots = 0;       // J
  int pool_size = 0;   // M, support candidates per class
  int query_count = 0; // Q, queries per class

  void validate(int per_class_examples) const {
    if (way < 2) throw ArgumentError("episode shape: K must be >= 2");
    if (shots < 1 || shots > pool_size)
      throw ArgumentError("episode shape: need 1 <= J <= M");
    if (query_count < 1) throw ArgumentError("episode shape: Q must be >= 1");
    if (pool_size + query_count > per_class_examples)
      throw ConfigError("episode shape: M + Q exceeds per-class example count");
  }
};

struct Episode {
  EpisodeShape shape;
  std::vector<int> class_ids;            // global ids, index = local label
  std::vector<Mat> support_pool;         // per class: M x dim
  Mat query_inputs;                      // (K*Q) x dim
  std::vector<int> query_labels;         // local labels
  std::vector<std::vector<int>> support_example_ids;  // global example ids per class
  std::vector<std::vector<int>> query_example_ids;
};

/// In-memory dataset. `centers` is generation metadata (not persisted); it is
/// empty after load_dataset.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Mat> per_class;  // class k: example_count x dim
  std::vector<Vec> centers;

  int dim() const { return manifest.dim; }
  int num_classes() const { return static_cast<int>(manifest.classes.size()); }
};

struct GaussianUniverseConfig {
  std::string name = "synthetic";
  int num_classes = 0;
  int dim = 0;
  double center_scale = 1.0;
  double within_std = 0.0;
  int examples_per_class = 0;
  std::uint64_t seed = 0;
};

/// Builds the synthetic universe in memory: class centers uniform in
/// [-center_scale, center_scale]^dim, examples = center + N(0, within_std^2 I).
/// Every stored value is snapped to its 9-significant-digit representation so
/// the dataset equals its on-disk form exactly.
inline Dataset make_gaussian_universe(const GaussianUniverseConfig& cfg) {
  if (cfg.num_classes < 3) throw ArgumentError("generate: num_classes must be >= 3");
  if (cfg.dim < 2) throw ArgumentError("generate: dim must be >= 2");
  if (!(cfg.within_std > 0.0)) throw ArgumentError("generate: within_std must be > 0");
  if (cfg.examples_per_class < 1) throw ArgumentError("generate: examples_per_class must be >= 1");

  Dataset ds;
  ds.manifest.name = cfg.name;
  ds.manifest.dim = cfg.dim;
  ds.manifest.seed = cfg.seed;
  ds.per_class.reserve(static_cast<std::size_t>(cfg.num_classes));
  ds.centers.reserve(static_cast<std::size_t>(cfg.num_classes));

  for (int k = 0; k < cfg.num_classes; ++k) {
    ds.manifest.classes.push_back({k, cfg.examples_per_class});
    Prng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    Vec center(static_cast<std::size_t>(cfg.dim));
    for (auto& c : center) c = rng.uniform(-cfg.center_scale, cfg.center_scale);
    Mat examples(static_cast<std::size_t>(cfg.examples_per_class),
                 static_cast<std::size_t>(cfg.dim));
    for (int e = 0; e < cfg.examples_per_class; ++e)
      for (int d = 0; d < cfg.dim; ++d)
        examples(e, d) = quantize_sig9(center[static_cast<std::size_t>(d)] +
                                       cfg.within_std * rng.normal());
    ds.centers.push_back(std::move(center));
    ds.per_class.push_back(std::move(examples));
  }
  ds.manifest.validate();
  return ds;
}

/// Dataset directory format: manifest.txt with keys name, dim, classes,
/// examples_per_class, seed; data.csv with header class_id,example_id,v0,...
/// sorted by (class_id, example_id), 9 significant digits, LF endings.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.manifest.validate();
  const int count0 = ds.manifest.classes.front().example_count;
  for (const auto& c : ds.manifest.classes)
    if (c.example_count != count0)
      throw IoError("dataset format requires a uniform per-class example count");

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string());

  KeyValueFile manifest;
  manifest.set("name", ds.manifest.name);
  manifest.set("dim", std::to_string(ds.manifest.dim));
  manifest.set("classes", std::to_string(ds.num_classes()));
  manifest.set("examples_per_class", std::to_string(count0));
  manifest.set("seed", std::to_string(ds.manifest.seed));
  manifest.write(dir / "manifest.txt");

  std::ofstream out(dir / "data.csv", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "data.csv").string());
  out << "class_id,example_id";
  for (int d = 0; d < ds.dim(); ++d) out << ",v" << d;
  out << "\n";
  for (int k = 0; k < ds.num_classes(); ++k) {
    const Mat& m = ds.per_class[static_cast<std::size_t>(k)];
    for (std::size_t e = 0; e < m.rows; ++e) {
      out << k << "," << e;
      for (std::size_t d = 0; d < m.cols; ++d) out << "," << format_sig(m(e, d), 9);
      out << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + (dir / "data.csv").string());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const KeyValueFile manifest = KeyValueFile::read(dir / "manifest.txt");
  Dataset ds;
  ds.manifest.name = manifest.get("name");
  ds.manifest.dim = static_cast<int>(parse_int(manifest.get("dim")));
  const int num_classes = static_cast<int>(parse_int(manifest.get("classes")));
  const int per_class = static_cast<int>(parse_int(manifest.get("examples_per_class")));
  ds.manifest.seed = static_cast<std::uint64_t>(parse_int(manifest.get("seed")));
  for (int k = 0; k < num_classes; ++k) ds.manifest.classes.push_back({k, per_class});
  ds.manifest.validate();

  std::ifstream in(dir / "data.csv", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "data.csv").string());
  std::string line;
  long lineno = 0;
  if (!std::getline(in, line)) throw ParseError("data.csv: empty file", 1);
  ++lineno;
  {
    std::string expect = "class_id,example_id";
    for (int d = 0; d < ds.manifest.dim; ++d) expect += ",v" + std::to_string(d);
    if (strip(line) != expect) throw ParseError("data.csv: malformed header", lineno);
  }

  ds.per_class.assign(static_cast<std::size_t>(num_classes),
                      Mat(static_cast<std::size_t>(per_class),
                          static_cast<std::size_t>(ds.manifest.dim)));
  int expected_class = 0, expected_example = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip(line).empty()) continue;
    const auto fields = split(strip(line), ',');
    if (static_cast<int>(fields.size()) != 2 + ds.manifest.dim)
      throw ParseError("data.csv: expected " + std::to_string(2 + ds.manifest.dim) +
                           " columns, got " + std::to_string(fields.size()),
                       lineno);
    const int cid = static_cast<int>(parse_int(fields[0], lineno));
    const int eid = static_cast<int>(parse_int(fields[1], lineno));
    if (expected_class >= num_classes)
      throw ParseError("data.csv: more rows than the manifest example counts allow", lineno);
    if (cid != expected_class || eid != expected_example)
      throw ParseError("data.csv: rows out of order or counts inconsistent with manifest"
                       " (expected class " + std::to_string(expected_class) +
                       " example " + std::to_string(expected_example) + ")", lineno);
    Mat& m = ds.per_class[static_cast<std::size_t>(cid)];
    for (int d = 0; d < ds.manifest.dim; ++d) {
      const double v = parse_double(fields[static_cast<std::size_t>(2 + d)], lineno);
      if (!std::isfinite(v)) throw ParseError("data.csv: non-finite value", lineno);
      m(static_cast<std::size_t>(eid), static_cast<std::size_t>(d)) = v;
    }
    if (++expected_example == per_class) {
      expected_example = 0;
      ++expected_class;
    }
  }
  if (expected_class != num_classes || expected_example != 0)
    throw ParseError("data.csv: fewer rows than the manifest example counts require", lineno);
  return ds;
}

/// Generates, writes to disk, and returns the dataset.
inline Dataset generate_gaussian_universe(const GaussianUniverseConfig& cfg,
                                          const std::filesystem::path& dir) {
  Dataset ds = make_gaussian_universe(cfg);
  save_dataset(ds, dir);
  return ds;
}

/// Deterministic shuffle by seed, then contiguous assignment using
/// largest-remainder sizing. Every part must end up with at least
/// min_classes classes.
inline ClassSplit split_classes(const DatasetManifest& manifest, double train_fraction,
                                double val_fraction, double test_fraction,
                                std::uint64_t seed, int min_classes = 5) {
  manifest.validate();
  if (!(train_fraction > 0.0 && val_fraction > 0.0 && test_fraction > 0.0))
    throw ArgumentError("split fractions must be positive");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ArgumentError("split fractions must sum to 1");

  const int n = static_cast<int>(manifest.classes.size());
  const double fractions[3] = {train_fraction, val_fraction, test_fraction};
  int sizes[3];
  double remainders[3];
  int assigned = 0;
  for (int p = 0; p < 3; ++p) {
    const double exact = fractions[p] * n;
    sizes[p] = static_cast<int>(std::floor(exact));
    remainders[p] = exact - sizes[p];
    assigned += sizes[p];
  }
  while (assigned < n) {
    int best = 0;
    for (int p = 1; p < 3; ++p)
      if (remainders[p] > remainders[best]) best = p;
    ++sizes[best];
    remainders[best] = -1.0;
    ++assigned;
  }
  for (int p = 0; p < 3; ++p)
    if (sizes[p] < min_classes)
      throw ConfigError("class split part smaller than the minimum way count (" +
                        std::to_string(sizes[p]) + " < " + std::to_string(min_classes) + ")");

  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  Prng rng(seed);
  rng.shuffle(ids);

  ClassSplit split;
  split.train_classes.assign(ids.begin(), ids.begin() + sizes[0]);
  split.val_classes.assign(ids.begin() + sizes[0], ids.begin() + sizes[0] + sizes[1]);
  split.test_classes.assign(ids.begin() + sizes[0] + sizes[1], ids.end());
  return split;
}

/// Samples one episode: K classes without replacement from the split part,
/// then M+Q distinct example indices per class (first M to the support pool,
/// the rest to the query set). Local labels follow the sampled class order.
inline Episode sample_episode(const Dataset& ds, const std::vector<int>& split_part,
                              const EpisodeShape& shape, std::uint64_t seed) {
  if (static_cast<int>(split_part.size()) < shape.way)
    throw ConfigError("sample_episode: split part has fewer classes than K");
  for (int cid : split_part) {
    if (cid < 0 || cid >= ds.num_classes())
      throw ArgumentError("sample_episode: class id outside dataset");
    shape.validate(ds.manifest.classes[static_cast<std::size_t>(cid)].example_count);
  }

  Prng rng(seed);
  const std::vector<int> picks =
      rng.sample_distinct(static_cast<int>(split_part.size()), shape.way);

  Episode ep;
  ep.shape = shape;
  ep.query_inputs = Mat(static_cast<std::size_t>(shape.way * shape.query_count),
                        static_cast<std::size_t>(ds.dim()));
  for (int local = 0; local < shape.way; ++local) {
    const int cid = split_part[static_cast<std::size_t>(picks[static_cast<std::size_t>(local)])];
    ep.class_ids.push_back(cid);
    const Mat& all = ds.per_class[static_cast<std::size_t>(cid)];
    const std::vector<int> chosen = rng.sample_distinct(
        static_cast<int>(all.rows), shape.pool_size + shape.query_count);

    Mat pool(static_cast<std::size_t>(shape.pool_size), static_cast<std::size_t>(ds.dim()));
    std::vector<int> support_ids, query_ids;
    for (int m = 0; m < shape.pool_size; ++m) {
      const int eid = chosen[static_cast<std::size_t>(m)];
      support_ids.push_back(eid);
      for (int d = 0; d < ds.dim(); ++d)
        pool(static_cast<std::size_t>(m), static_cast<std::size_t>(d)) =
            all(static_cast<std::size_t>(eid), static_cast<std::size_t>(d));
    }
    for (int q = 0; q < shape.query_count; ++q) {
      const int eid = chosen[static_cast<std::size_t>(shape.pool_size + q)];
      query_ids.push_back(eid);
      const std::size_t row = static_cast<std::size_t>(local * shape.query_count + q);
      for (int d = 0; d < ds.dim(); ++d)
        ep.query_inputs(row, static_cast<std::size_t>(d)) =
            all(static_cast<std::size_t>(eid), static_cast<std::size_t>(d));
      ep.query_labels.push_back(local);
    }
    ep.support_pool.push_back(std::move(pool));
    ep.support_example_ids.push_back(std::move(support_ids));
    ep.query_example_ids.push_back(std::move(query_ids));
  }
  return ep;
}

inline void save_split(const ClassSplit& split, const std::filesystem::path& path) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    return s;
  };
  KeyValueFile kv;
  kv.set("train", join(split.train_classes));
  kv.set("val", join(split.val_classes));
  kv.set("test", join(split.test_classes));
  kv.write(path);
}

inline ClassSplit load_split(const std::filesystem::path& path) {
  const KeyValueFile kv = KeyValueFile::read(path);
  auto parse_ids = [](const std::string& s) {
    std::vector<int> out;
    if (strip(s).empty()) return out;
    for (const auto& tok : split(s, ',')) out.push_back(static_cast<int>(parse_int(strip(tok))));
    return out;
  };
  ClassSplit cs;
  cs.train_classes = parse_ids(kv.get("train"));
  cs.val_classes = parse_ids(kv.get("val"));
  cs.test_classes = parse_ids(kv.get("test"));
  return cs;
}

}  // namespace metarange

#include "dbf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dbf/rng.hpp"

namespace dbf {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;
constexpr double kBaseStd = 0.35;      // smooth carrier amplitude
constexpr double kSignalGain = 2.0;    // planted direction scale
constexpr double kEpsStd = 0.12;       // per-modality amplitude noise
constexpr double kDistractStd = 1.25;  // distractor dimension noise
constexpr double kEnvDepth = 0.25;     // envelope modulation depth
constexpr double kJitterFrac = 0.15;   // duplicate jitter, keeps cosine >= 0.988

// Fixed stream tags for seed derivation.
constexpr uint64_t kDirectionStream = 101;   // +modality index
constexpr uint64_t kEnvelopeStream = 201;
constexpr uint64_t kSampleStream = 1'000'000;  // +sample index

}  // namespace

std::vector<double> Dataset::labels() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const MultimodalSample& s : samples) out.push_back(s.label);
  return out;
}

void GenSpec::validate() const {
  if (w_t < 0.0 || w_v < 0.0 || w_a < 0.0)
    throw ConfigError("generator: allocation weights must be nonnegative");
  if (std::fabs(w_t + w_v + w_a - 1.0) > 1e-9)
    throw ConfigError("generator: allocation weights must sum to 1, got " +
                      std::to_string(w_t + w_v + w_a));
  if (redundancy_factor < 0.0 || redundancy_factor >= 1.0)
    throw ConfigError("generator: redundancy_factor must be in [0, 1)");
  const size_t lens[3] = {l_t, l_v, l_a};
  const size_t dims[3] = {d_t, d_v, d_a};
  const char* names[3] = {"text", "visual", "audio"};
  for (int m = 0; m < 3; ++m) {
    if (lens[m] == 0 || dims[m] == 0)
      throw ConfigError(std::string("generator: ") + names[m] +
                        " length and feature dim must be positive");
    if (frame_noise_dims >= dims[m])
      throw ConfigError("generator: frame_noise_dims " + std::to_string(frame_noise_dims) +
                        " >= " + names[m] + " feature dim " + std::to_string(dims[m]));
  }
}

Dataset generate(const GenSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.dims = {spec.l_t, spec.d_t, spec.l_v, spec.d_v, spec.l_a, spec.d_a};

  const size_t lens[3] = {spec.l_t, spec.l_v, spec.l_a};
  const size_t dims[3] = {spec.d_t, spec.d_v, spec.d_a};
  const double weights[3] = {spec.w_t, spec.w_v, spec.w_a};

  // Dataset-level structure shared by every sample: one planted direction
  // per modality over its signal dims, one envelope phase per modality.
  std::vector<std::vector<double>> direction(3);
  for (int m = 0; m < 3; ++m) {
    size_t d_sig = dims[m] - spec.frame_noise_dims;
    Rng dir_rng(derive_seed(spec.seed, kDirectionStream + static_cast<uint64_t>(m)));
    direction[m].resize(d_sig);
    double unit = kSignalGain / std::sqrt(static_cast<double>(d_sig));
    for (size_t j = 0; j < d_sig; ++j)
      direction[m][j] = dir_rng.uniform() < 0.5 ? unit : -unit;
  }

  double env_phase[3];
  {
    Rng env_rng(derive_seed(spec.seed, kEnvelopeStream));
    for (int m = 0; m < 3; ++m) env_phase[m] = env_rng.uniform(0.0, 2.0 * kPi);
  }

  ds.samples.reserve(spec.n_samples);
  for (size_t i = 0; i < spec.n_samples; ++i) {
    Rng rng(derive_seed(spec.seed, kSampleStream + i));
    MultimodalSample s;
    s.id = "s" + std::to_string(i);

    double u = rng.uniform(-3.0, 3.0);
    s.label = u;
    // Zero-sum amplitude noise: text balances visual+audio, so the full
    // trio of amplitudes sums to u exactly while every subset is noisy.
    double eps_v = rng.normal(0.0, kEpsStd);
    double eps_a = rng.normal(0.0, kEpsStd);
    double eps[3] = {-(eps_v + eps_a), eps_v, eps_a};

    Tensor* mats[3] = {&s.x_t, &s.x_v, &s.x_a};
    for (int m = 0; m < 3; ++m) {
      size_t l = lens[m], d = dims[m];
      size_t d_sig = d - spec.frame_noise_dims;
      double amp = u * weights[m] + eps[m];
      Tensor x = Tensor::zeros({l, d});
      for (size_t j = 0; j < d_sig; ++j) {
        // Integer carrier frequency below the sequence length: the carrier
        // pools to zero over the full window, leaving the planted component
        // as the pooled content.
        size_t f = l > 1 ? 1 + rng.below(std::min<size_t>(3, l - 1)) : 1;
        double phase = rng.uniform(0.0, 2.0 * kPi);
        for (size_t p = 0; p < l; ++p) {
          double t = static_cast<double>(p) / static_cast<double>(l);
          double carrier = kBaseStd * std::sin(2.0 * kPi * static_cast<double>(f) * t + phase);
          double env = 1.0 + kEnvDepth * std::sin(2.0 * kPi * t + env_phase[m]);
          x.at(p, j) = carrier + amp * env * direction[m][j];
        }
      }
      for (size_t j = d_sig; j < d; ++j)
        for (size_t p = 0; p < l; ++p) x.at(p, j) = rng.normal(0.0, kDistractStd);
      *mats[m] = x;
    }

    // Visual near-duplicates: overwrite chosen frames with a jittered copy
    // of their predecessor, jitter rescaled to a fixed fraction of the
    // frame norm so the pairwise cosine floor holds by construction.
    size_t l_v = spec.l_v, d_v = spec.d_v;
    size_t n_dup = std::min<size_t>(
        l_v - 1, static_cast<size_t>(std::llround(spec.redundancy_factor *
                                                  static_cast<double>(l_v))));
    if (n_dup > 0) {
      std::vector<size_t> positions;
      for (size_t p = 1; p < l_v; ++p) positions.push_back(p);
      rng.shuffle(positions);
      positions.resize(n_dup);
      std::sort(positions.begin(), positions.end());
      for (size_t p : positions) {
        std::vector<double> jitter(d_v);
        double jn = 0.0, fn = 0.0;
        for (size_t j = 0; j < d_v; ++j) {
          jitter[j] = rng.normal();
          jn += jitter[j] * jitter[j];
          fn += s.x_v.at(p - 1, j) * s.x_v.at(p - 1, j);
        }
        jn = std::sqrt(jn);
        fn = std::sqrt(fn);
        double scale_to = jn > 1e-300 ? kJitterFrac * fn / jn : 0.0;
        for (size_t j = 0; j < d_v; ++j)
          s.x_v.at(p, j) = s.x_v.at(p - 1, j) + jitter[j] * scale_to;
      }
    }

    if (spec.misalignment_shift % l_v != 0) {
      size_t shift = spec.misalignment_shift % l_v;
      Tensor rotated = Tensor::zeros({l_v, d_v});
      for (size_t p = 0; p < l_v; ++p)
        for (size_t j = 0; j < d_v; ++j) rotated.at(p, j) = s.x_v.at((p + shift) % l_v, j);
      s.x_v = rotated;
    }

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

namespace {

json tensor_to_json(const Tensor& t) {
  json rows = json::array();
  for (size_t i = 0; i < t.rows(); ++i) {
    json row = json::array();
    for (size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor tensor_from_json(const json& rows, size_t l, size_t d, const char* field,
                        size_t line_no) {
  if (!rows.is_array() || rows.size() != l)
    throw IoError("line " + std::to_string(line_no) + ": " + field + " has " +
                  std::to_string(rows.is_array() ? rows.size() : 0) +
                  " rows, header declares " + std::to_string(l));
  Tensor t = Tensor::zeros({l, d});
  for (size_t i = 0; i < l; ++i) {
    const json& row = rows[i];
    if (!row.is_array() || row.size() != d)
      throw IoError("line " + std::to_string(line_no) + ": " + field + " row " +
                    std::to_string(i) + " has " +
                    std::to_string(row.is_array() ? row.size() : 0) +
                    " values, header declares " + std::to_string(d));
    for (size_t j = 0; j < d; ++j) {
      if (!row[j].is_number())
        throw IoError("line " + std::to_string(line_no) + ": " + field +
                      " contains a non-numeric entry");
      t.at(i, j) = row[j].get<double>();
    }
  }
  return t;
}

}  // namespace

void write_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  json header = {{"kind", "header"},
                 {"l_t", dataset.dims.l_t}, {"d_t", dataset.dims.d_t},
                 {"l_v", dataset.dims.l_v}, {"d_v", dataset.dims.d_v},
                 {"l_a", dataset.dims.l_a}, {"d_a", dataset.dims.d_a},
                 {"n_samples", dataset.samples.size()}};
  out << header.dump() << "\n";
  for (const MultimodalSample& s : dataset.samples) {
    json rec = {{"id", s.id},
                {"label", s.label},
                {"x_t", tensor_to_json(s.x_t)},
                {"x_v", tensor_to_json(s.x_v)},
                {"x_a", tensor_to_json(s.x_a)}};
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  Dataset ds;
  std::string line;
  size_t line_no = 0;
  size_t declared = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError(path + ": line " + std::to_string(line_no) +
                    ": malformed record: " + e.what());
    }
    if (!have_header) {
      if (!rec.is_object() || rec.value("kind", "") != "header")
        throw IoError(path + ": line 1: expected header record");
      try {
        ds.dims.l_t = rec.at("l_t").get<size_t>();
        ds.dims.d_t = rec.at("d_t").get<size_t>();
        ds.dims.l_v = rec.at("l_v").get<size_t>();
        ds.dims.d_v = rec.at("d_v").get<size_t>();
        ds.dims.l_a = rec.at("l_a").get<size_t>();
        ds.dims.d_a = rec.at("d_a").get<size_t>();
        declared = rec.at("n_samples").get<size_t>();
      } catch (const json::exception& e) {
        throw IoError(path + ": line 1: bad header: " + e.what());
      }
      have_header = true;
      continue;
    }
    try {
      MultimodalSample s;
      if (!rec.is_object() || !rec.contains("id") || !rec.contains("label"))
        throw IoError("line " + std::to_string(line_no) + ": missing id or label");
      s.id = rec.at("id").get<std::string>();
      if (!rec.at("label").is_number())
        throw IoError("line " + std::to_string(line_no) + ": label must be numeric");
      s.label = rec.at("label").get<double>();
      s.x_t = tensor_from_json(rec.at("x_t"), ds.dims.l_t, ds.dims.d_t, "x_t", line_no);
      s.x_v = tensor_from_json(rec.at("x_v"), ds.dims.l_v, ds.dims.d_v, "x_v", line_no);
      s.x_a = tensor_from_json(rec.at("x_a"), ds.dims.l_a, ds.dims.d_a, "x_a", line_no);
      ds.samples.push_back(std::move(s));
    } catch (const IoError&) {
      throw;
    } catch (const json::exception& e) {
      throw IoError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (have_header && ds.samples.size() != declared)
    throw IoError(path + ": header declares " + std::to_string(declared) +
                  " samples, found " + std::to_string(ds.samples.size()));
  return ds;
}

std::vector<std::vector<size_t>> batch_indices(size_t n, size_t batch_size,
                                               uint64_t shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch_indices: batch_size must be positive");
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(shuffle_seed);
  rng.shuffle(perm);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < n; start += batch_size) {
    size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (!batches.empty() && batches.back().size() < batch_size && batches.back().size() < 2)
    batches.pop_back();
  return batches;
}

}  // namespace dbf

#include "qamoe/synthdata.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "binary_io.hpp"
#include "qamoe/errors.hpp"

namespace qamoe {

namespace {

constexpr std::string_view kMagic = "QMDS";
constexpr std::uint32_t kGeneratorVersion = 1;
constexpr std::size_t kBasisSize = 5;
// Midpoint quadrature nodes used to measure the signal variance of M phi(y).
constexpr std::size_t kQuadratureNodes = 20000;

void write_spec(detail::ByteWriter& w, const DatasetSpec& spec) {
  w.put<std::uint64_t>(spec.n_train);
  w.put<std::uint64_t>(spec.n_val);
  w.put<std::uint64_t>(spec.n_test);
  for (const auto& shape : spec.modalities) {
    w.put<std::uint32_t>(shape.seq_len);
    w.put<std::uint32_t>(shape.feature_dim);
    w.put<double>(shape.snr);
  }
  w.put<std::uint64_t>(spec.seed);
}

DatasetSpec read_spec(detail::ByteReader& r) {
  DatasetSpec spec;
  spec.n_train = r.get<std::uint64_t>("n_train");
  spec.n_val = r.get<std::uint64_t>("n_val");
  spec.n_test = r.get<std::uint64_t>("n_test");
  for (auto& shape : spec.modalities) {
    shape.seq_len = r.get<std::uint32_t>("seq_len");
    shape.feature_dim = r.get<std::uint32_t>("feature_dim");
    shape.snr = r.get<double>("snr");
  }
  spec.seed = r.get<std::uint64_t>("seed");
  return spec;
}

Sample make_sample(const DatasetSpec& spec, const std::array<Matrix, kNumModalities>& mixing,
                   const std::array<double, kNumModalities>& rho, SeededRng rng) {
  Sample s;
  s.label = rng.uniform(kLabelMin, kLabelMax);
  const auto basis = latent_basis(s.label);
  for (Modality m : kAllModalities) {
    const auto& shape = spec.shape(m);
    const Matrix& mix = mixing[index_of(m)];
    const Vector clean = affine(mix, Vector(shape.feature_dim, 0.0), basis);
    SeededRng noise = rng.split(static_cast<std::uint64_t>(index_of(m)));
    FeatureMatrix u(shape.seq_len, shape.feature_dim);
    for (std::size_t t = 0; t < shape.seq_len; ++t) {
      auto row = u.row(t);
      for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = clean[j] + rho[index_of(m)] * noise.normal();
      }
    }
    s.feature(m) = std::move(u);
  }
  return s;
}

}  // namespace

std::string_view modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::kText:
      return "text";
    case Modality::kAudio:
      return "audio";
    case Modality::kVision:
      return "vision";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  if (name == "t" || name == "text") return Modality::kText;
  if (name == "a" || name == "audio") return Modality::kAudio;
  if (name == "v" || name == "vision") return Modality::kVision;
  throw InvalidInput("unknown modality '" + std::string(name) + "'");
}

void DatasetSpec::validate() const {
  if (n_train == 0) throw InvalidInput("dataset n_train must be positive");
  if (n_val == 0) throw InvalidInput("dataset n_val must be positive");
  if (n_test == 0) throw InvalidInput("dataset n_test must be positive");
  for (Modality m : kAllModalities) {
    const auto& s = shape(m);
    const std::string name(modality_name(m));
    if (s.seq_len == 0) throw InvalidInput("dataset seq_len for " + name + " must be positive");
    if (s.feature_dim == 0) {
      throw InvalidInput("dataset feature_dim for " + name + " must be positive");
    }
    if (!(s.snr > 0.0)) throw InvalidInput("dataset snr for " + name + " must be positive");
  }
}

Dataset::Dataset(DatasetSpec spec, std::vector<Sample> train, std::vector<Sample> val,
                 std::vector<Sample> test)
    : spec_(spec),
      train_(std::move(train)),
      val_(std::move(val)),
      test_(std::move(test)),
      fingerprint_(spec_fingerprint(spec_)) {}

std::span<const Sample> Dataset::split(Split s) const noexcept {
  switch (s) {
    case Split::kTrain:
      return train_;
    case Split::kVal:
      return val_;
    case Split::kTest:
      return test_;
  }
  return {};
}

std::array<double, 5> latent_basis(double y) noexcept {
  return {y, y * y, std::sin(y), std::tanh(y), 1.0};
}

Matrix mixing_matrix(const DatasetSpec& spec, Modality m) {
  SeededRng rng = SeededRng(spec.seed).split("mixing").split(
      static_cast<std::uint64_t>(index_of(m)));
  Matrix mix(spec.shape(m).feature_dim, kBasisSize);
  for (double& v : mix.values()) v = rng.normal();
  return mix;
}

double noise_scale(const Matrix& mixing, double snr) {
  if (std::isinf(snr)) return 0.0;
  if (!(snr > 0.0)) throw InvalidInput("noise_scale: snr must be positive");
  Vector mean(mixing.rows(), 0.0);
  Vector second(mixing.rows(), 0.0);
  const Vector zero(mixing.rows(), 0.0);
  const double width = kLabelMax - kLabelMin;
  for (std::size_t q = 0; q < kQuadratureNodes; ++q) {
    const double y = kLabelMin + width * (static_cast<double>(q) + 0.5) /
                                     static_cast<double>(kQuadratureNodes);
    const auto basis = latent_basis(y);
    const Vector signal = affine(mixing, zero, basis);
    for (std::size_t j = 0; j < signal.size(); ++j) {
      mean[j] += signal[j];
      second[j] += signal[j] * signal[j];
    }
  }
  double variance = 0.0;
  const auto n = static_cast<double>(kQuadratureNodes);
  for (std::size_t j = 0; j < mean.size(); ++j) {
    const double mu = mean[j] / n;
    variance += second[j] / n - mu * mu;
  }
  variance /= static_cast<double>(mean.size());
  return std::sqrt(variance / snr);
}

std::uint64_t spec_fingerprint(const DatasetSpec& spec) {
  detail::ByteWriter w;
  w.put<std::uint32_t>(kGeneratorVersion);
  write_spec(w, spec);
  return fnv1a64(w.bytes());
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  std::array<Matrix, kNumModalities> mixing;
  std::array<double, kNumModalities> rho{};
  for (Modality m : kAllModalities) {
    mixing[index_of(m)] = mixing_matrix(spec, m);
    rho[index_of(m)] = noise_scale(mixing[index_of(m)], spec.shape(m).snr);
  }
  const SeededRng samples = SeededRng(spec.seed).split("samples");
  std::uint64_t index = 0;
  auto build = [&](std::uint64_t count) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i, ++index) {
      out.push_back(make_sample(spec, mixing, rho, samples.split(index)));
    }
    return out;
  };
  auto train = build(spec.n_train);
  auto val = build(spec.n_val);
  auto test = build(spec.n_test);
  return Dataset(spec, std::move(train), std::move(val), std::move(test));
}

// Layout (little-endian):
//   "QMDS" | u16 version | u64 n_train n_val n_test
//   | 3 x (u32 seq_len, u32 feature_dim, f64 snr) | u64 seed | u64 fingerprint
//   | per sample (train, val, test): f64 label, then text, audio, vision
//     matrices as seq_len * feature_dim row-major f64.
std::vector<unsigned char> serialize(const Dataset& dataset) {
  detail::ByteWriter w;
  w.magic(kMagic);
  w.put<std::uint16_t>(kDatasetFormatVersion);
  write_spec(w, dataset.spec());
  w.put<std::uint64_t>(dataset.fingerprint());
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const Sample& sample : dataset.split(s)) {
      w.put<double>(sample.label);
      for (const auto& u : sample.features) w.put_doubles(u.values());
    }
  }
  return w.take();
}

Dataset deserialize(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kMagic, "QMDS dataset");
  const auto version = r.get<std::uint16_t>("format version");
  if (version != kDatasetFormatVersion) {
    throw VersionError("QMDS dataset", version, kDatasetFormatVersion);
  }
  const std::uint64_t spec_offset = r.offset();
  const DatasetSpec spec = read_spec(r);
  try {
    spec.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("invalid spec block: ") + e.what(), spec_offset);
  }
  const std::uint64_t stored = r.get<std::uint64_t>("fingerprint");
  if (stored != spec_fingerprint(spec)) {
    throw FormatError("fingerprint does not match spec block", r.offset() - 8);
  }
  std::size_t sample_bytes = sizeof(double);
  for (const auto& shape : spec.modalities) {
    sample_bytes += sizeof(double) * shape.seq_len * shape.feature_dim;
  }
  const std::uint64_t total = spec.n_train + spec.n_val + spec.n_test;
  if (r.remaining() / sample_bytes < total) {
    throw FormatError("truncated file: payload shorter than " + std::to_string(total) +
                          " samples",
                      r.offset());
  }
  auto read_split = [&](std::uint64_t count) {
    std::vector<Sample> out(count);
    for (Sample& sample : out) {
      sample.label = r.get<double>("label");
      for (Modality m : kAllModalities) {
        const auto& shape = spec.shape(m);
        FeatureMatrix u(shape.seq_len, shape.feature_dim);
        r.get_doubles(u.values(), "feature matrix");
        sample.feature(m) = std::move(u);
      }
    }
    return out;
  };
  auto train = read_split(spec.n_train);
  auto val = read_split(spec.n_val);
  auto test = read_split(spec.n_test);
  r.expect_end();
  return Dataset(spec, std::move(train), std::move(val), std::move(test));
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  detail::write_file(path, serialize(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return deserialize(detail::read_file(path));
}

}  // namespace qamoe

#include "jtss/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace jtss::teacher {
namespace {

constexpr int kBands = 24;

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open teacher features: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string to_string(SourceKind kind) { return kind == SourceKind::kSynthetic ? "synthetic" : "file_backed"; }

SourceKind source_kind_from_string(const std::string& s) {
  if (s == "synthetic") return SourceKind::kSynthetic;
  if (s == "file_backed") return SourceKind::kFileBacked;
  throw Error("unknown teacher kind '" + s + "' (expected synthetic or file_backed)");
}

void validate(const TeacherSource& src) {
  if (src.dim < 1) throw Error("teacher dim must be >= 1");
  if (src.kind == SourceKind::kFileBacked && !std::filesystem::is_directory(src.root))
    throw Error("teacher feature directory does not exist: " + src.root.string());
}

std::size_t teacher_frames(std::size_t n_samples) {
  if (n_samples < static_cast<std::size_t>(kWindowSamples))
    throw Error("waveform shorter than the teacher window (" + std::to_string(n_samples) + " < 400 samples)");
  return 1 + (n_samples - kWindowSamples) / kHopSamples;
}

TeacherSequence synthetic_teacher(const audio::Waveform& w, int dim, uint64_t seed) {
  if (dim < 1) throw Error("synthetic teacher dim must be >= 1");
  const std::size_t frames = teacher_frames(w.size());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(kBands)));
  Matrix projection(dim, kBands);
  for (double& v : projection.values()) v = normal(rng);

  TeacherSequence seq;
  seq.vectors = Matrix(frames, dim);
  std::vector<double> window(kWindowSamples);
  std::vector<double> profile(kBands);
  const std::size_t bins = audio::kFftSize / 2;  // bins 1..256, DC dropped
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(t * kHopSamples), kWindowSamples, window.begin());
    const std::vector<double> power = audio::power_spectrum(window);
    std::fill(profile.begin(), profile.end(), 0.0);
    for (std::size_t k = 1; k <= bins; ++k) profile[(k - 1) * kBands / bins] += power[k];
    double total = 0.0;
    for (double e : profile) total += e;
    for (double& e : profile) e = std::log((total > 0.0 ? e / total : 1.0 / kBands) + 1e-8);
    auto row = seq.vectors.row(t);
    double norm = 0.0;
    for (int d = 0; d < dim; ++d) {
      double s = 0.0;
      for (int b = 0; b < kBands; ++b) s += projection(d, b) * profile[b];
      row[d] = s;
      norm += s * s;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& v : row) v /= norm;
  }
  return seq;
}

void write_jtsf(const std::filesystem::path& path, const Matrix& vectors) {
  std::string out = "JTSF";
  put_u32(out, kJtsfVersion);
  put_u32(out, static_cast<uint32_t>(vectors.rows()));
  put_u32(out, static_cast<uint32_t>(vectors.cols()));
  for (double v : vectors.values()) {
    const float f = static_cast<float>(v);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write teacher features: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Matrix read_jtsf(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(p, "JTSF", 4) != 0) throw Error("not a JTSF file: " + path.string());
  const uint32_t version = get_u32(p + 4);
  if (version != kJtsfVersion) throw Error("unsupported JTSF version " + std::to_string(version) + ": " + path.string());
  const uint32_t rows = get_u32(p + 8), cols = get_u32(p + 12);
  const std::size_t expected = 16 + static_cast<std::size_t>(rows) * cols * 4;
  if (bytes.size() != expected)
    throw Error("JTSF payload size does not match header (" + std::to_string(rows) + "x" + std::to_string(cols) +
                "): " + path.string());
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const uint32_t u = get_u32(p + 16 + 4 * i);
    float f;
    std::memcpy(&f, &u, 4);
    m.values()[i] = f;
  }
  return m;
}

std::filesystem::path feature_path(const TeacherSource& src, const std::string& utt_id) {
  return src.root / (utt_id + ".jtsf");
}

TeacherSequence load_teacher(const TeacherSource& src, const std::string& utt_id, const audio::Waveform* waveform) {
  if (src.kind == SourceKind::kSynthetic) {
    if (waveform == nullptr) throw Error("synthetic teacher needs the waveform of " + utt_id);
    TeacherSequence seq = synthetic_teacher(*waveform, src.dim, src.seed);
    seq.utt_id = utt_id;
    return seq;
  }
  const auto path = feature_path(src, utt_id);
  if (!std::filesystem::exists(path)) throw Error("missing teacher features for " + utt_id + ": " + path.string());
  TeacherSequence seq;
  seq.vectors = read_jtsf(path);
  seq.utt_id = utt_id;
  if (static_cast<int>(seq.dim()) != src.dim)
    throw Error("teacher dimension mismatch for " + utt_id + ": file has " + std::to_string(seq.dim()) +
                ", source declares " + std::to_string(src.dim));
  return seq;
}

Matrix slice_frames(const TeacherSequence& seq, std::size_t first, std::size_t count) {
  if (seq.num_frames() == 0) throw Error("empty teacher sequence");
  Matrix out(count, seq.dim());
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = seq.vectors.row((first + i) % seq.num_frames());
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

uint64_t checksum_features(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".jtsf") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& f : files) {
    feed(std::filesystem::relative(f, root).string());
    feed(read_file(f));
  }
  return h;
}

}  // namespace jtss::teacher

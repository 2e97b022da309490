#include "avur/vur/units.hpp"

#include "avur/amf/beam_search.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>

namespace avur {

double squared_distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  return (a - b).squaredNorm();
}

int quantize(const Eigen::Ref<const RowVector>& x, const Codebook& cb) {
  if (x.size() != cb.dim())
    throw ShapeError("quantize: vector of " + std::to_string(x.size()) + " for codebook of dim " +
                     std::to_string(cb.dim()));
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    const double d = squared_distance(x, cb.centroids.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::vector<int> quantize_frames(const Matrix& frames, const Codebook& cb) {
  std::vector<int> labels(static_cast<size_t>(frames.rows()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) labels[static_cast<size_t>(t)] = quantize(frames.row(t), cb);
  return labels;
}

namespace {

size_t count_distinct(const Matrix& frames) {
  std::set<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    const RowVector r = frames.row(i);
    rows.insert(std::vector<double>(r.data(), r.data() + r.size()));
  }
  return rows.size();
}

Matrix plus_plus_seed(const Matrix& frames, int k, Rng& rng) {
  const Eigen::Index n = frames.rows();
  Matrix c(k, frames.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = frames.row(first(rng));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = squared_distance(frames.row(i), c.row(0));
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2(i) <= 0) continue;
        chosen = i;
        target -= d2(i);
        if (target < 0) break;
      }
    }
    c.row(j) = frames.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), squared_distance(frames.row(i), c.row(j)));
  }
  return c;
}

}  // namespace

Codebook kmeans_fit(const Matrix& frames, int k, int max_iters, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kmeans_fit: K must be >= 2");
  if (max_iters < 1) throw std::invalid_argument("kmeans_fit: max_iters must be >= 1");
  if (frames.rows() < k) throw std::invalid_argument("kmeans_fit: fewer frames than clusters");
  require_finite(frames, "kmeans_fit");
  if (count_distinct(frames) < static_cast<size_t>(k))
    throw std::invalid_argument("kmeans_fit: fewer distinct points than K=" + std::to_string(k));

  Rng rng(seed);
  Codebook cb;
  cb.seed = seed;
  cb.centroids = plus_plus_seed(frames, k, rng);
  const Eigen::Index n = frames.rows();
  std::vector<int> labels(static_cast<size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    double inertia = 0.0;
    Eigen::VectorXd dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = quantize(frames.row(i), cb);
      dist(i) = squared_distance(frames.row(i), cb.centroids.row(l));
      inertia += dist(i);
      if (labels[static_cast<size_t>(i)] != l) changed = true;
      labels[static_cast<size_t>(i)] = l;
    }
    cb.inertia = inertia;
    cb.inertia_history.push_back(inertia);
    cb.iterations = it + 1;
    if (!changed && it > 0) break;

    // Means shifted by each cluster's first member: exact when all members coincide.
    Matrix shift(k, frames.cols());
    Matrix sums = Matrix::Zero(k, frames.cols());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = labels[static_cast<size_t>(i)];
      if (counts[static_cast<size_t>(l)]++ == 0) shift.row(l) = frames.row(i);
      sums.row(l) += frames.row(i) - shift.row(l);
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<size_t>(j)] > 0) {
        cb.centroids.row(j) = shift.row(j) + sums.row(j) / counts[static_cast<size_t>(j)];
        continue;
      }
      Eigen::Index far = 0;
      dist.maxCoeff(&far);
      cb.centroids.row(j) = frames.row(far);
      dist(far) = 0.0;
    }
  }
  return cb;
}

std::vector<int> VisualUnitSequence::labels() const {
  std::vector<int> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back(u.label);
  return out;
}

std::vector<int> VisualUnitSequence::expand_labels() const {
  std::vector<int> out;
  for (const auto& u : units) out.insert(out.end(), static_cast<size_t>(u.span), u.label);
  return out;
}

VisualUnitSequence rle_compress(std::span<const int> labels, const FeatureSequence& frames) {
  if (static_cast<Eigen::Index>(labels.size()) != frames.length())
    throw ShapeError("rle_compress: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(frames.length()) + " frames");
  VisualUnitSequence out;
  size_t start = 0;
  while (start < labels.size()) {
    size_t end = start + 1;
    while (end < labels.size() && labels[end] == labels[start]) ++end;
    const auto span = static_cast<Eigen::Index>(end - start);
    RowVector mean = frames.frames.middleRows(static_cast<Eigen::Index>(start), span).colwise().sum() /
                     static_cast<double>(span);
    out.units.push_back({labels[start], std::move(mean), static_cast<int>(span)});
    start = end;
  }
  return out;
}

std::shared_ptr<const VisualUnitSequence> UnitCache::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : it->second;
}

std::shared_ptr<const VisualUnitSequence> UnitCache::get_or_compute(const std::string& id,
                                                                    const Compute& compute) {
  if (auto hit = find(id)) return hit;
  auto value = std::make_shared<const VisualUnitSequence>(compute());
  std::unique_lock lock(mu_);
  auto [it, inserted] = entries_.emplace(id, std::move(value));
  if (inserted) ++misses_;
  return it->second;
}

size_t UnitCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("codebook: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("codebook: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_codebook(std::ostream& os, const Codebook& cb) {
  os.write("AVCB", 4);
  put_u32(os, kCodebookVersion);
  put_u64(os, static_cast<std::uint64_t>(cb.size()));
  put_u64(os, static_cast<std::uint64_t>(cb.dim()));
  put_u64(os, cb.seed);
  put_u64(os, static_cast<std::uint64_t>(cb.iterations));
  for (Eigen::Index i = 0; i < cb.centroids.size(); ++i) {
    std::uint64_t bits;
    const double v = cb.centroids.data()[i];
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(os, bits);
  }
}

Codebook read_codebook(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "AVCB", 4) != 0)
    throw std::runtime_error("codebook: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kCodebookVersion)
    throw std::runtime_error("codebook: unsupported version " + std::to_string(version));
  const auto k = static_cast<Eigen::Index>(get_u64(is));
  const auto d = static_cast<Eigen::Index>(get_u64(is));
  Codebook cb;
  cb.seed = get_u64(is);
  cb.iterations = static_cast<int>(get_u64(is));
  cb.centroids.resize(k, d);
  for (Eigen::Index i = 0; i < cb.centroids.size(); ++i) {
    const std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    cb.centroids.data()[i] = v;
  }
  return cb;
}

void write_codebook_file(const std::string& path, const Codebook& cb) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_codebook(os, cb);
}

Codebook read_codebook_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_codebook(is);
}

void export_codebook_text(std::ostream& os, const Codebook& cb) {
  os << cb.size() << ' ' << cb.dim() << ' ' << cb.seed << ' ' << cb.iterations << '\n';
  for (Eigen::Index r = 0; r < cb.centroids.rows(); ++r) {
    for (Eigen::Index c = 0; c < cb.centroids.cols(); ++c)
      os << (c ? " " : "") << format_double(cb.centroids(r, c));
    os << '\n';
  }
}

}  // namespace avur

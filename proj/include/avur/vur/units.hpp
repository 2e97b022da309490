#pragma once

#include "avur/encoders/encoders.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <shared_mutex>

namespace avur {

struct Codebook {
  Matrix centroids;  // K x D
  double inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per assignment pass
  std::uint64_t seed = 0;
  int iterations = 0;

  int size() const { return static_cast<int>(centroids.rows()); }
  Eigen::Index dim() const { return centroids.cols(); }
};

// k-means++ seeding then Lloyd iterations until the assignment stops changing
// or max_iters passes. An emptied cluster is moved onto the point farthest
// from its current centroid.
Codebook kmeans_fit(const Matrix& frames, int k, int max_iters, std::uint64_t seed);

// Nearest centroid by Euclidean distance; the lowest index wins ties.
int quantize(const Eigen::Ref<const RowVector>& x, const Codebook& cb);
std::vector<int> quantize_frames(const Matrix& frames, const Codebook& cb);
double squared_distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b);

struct VisualUnit {
  int label = 0;
  RowVector mean;  // average of the span's frames
  int span = 0;
};

struct VisualUnitSequence {
  std::vector<VisualUnit> units;

  size_t size() const { return units.size(); }
  std::vector<int> labels() const;
  // Each label repeated span times: the per-frame labels the units came from.
  std::vector<int> expand_labels() const;
};

// Collapse maximal runs of equal labels into one unit each, averaging frames.
VisualUnitSequence rle_compress(std::span<const int> labels, const FeatureSequence& frames);

// Units per utterance id, computed once. Concurrent lookups share a lock;
// insertion is exclusive. Hits return the same object.
class UnitCache {
 public:
  using Compute = std::function<VisualUnitSequence()>;

  std::shared_ptr<const VisualUnitSequence> get_or_compute(const std::string& id, const Compute& compute);
  std::shared_ptr<const VisualUnitSequence> find(const std::string& id) const;
  size_t size() const;
  size_t misses() const { return misses_; }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const VisualUnitSequence>> entries_;
  size_t misses_ = 0;
};

// Binary layout, little-endian: "AVCB", u32 version, u64 K, u64 D, u64 seed,
// u64 iterations, then K*D f64 centroids row by row.
inline constexpr std::uint32_t kCodebookVersion = 1;
void write_codebook(std::ostream& os, const Codebook& cb);
Codebook read_codebook(std::istream& is);
void write_codebook_file(const std::string& path, const Codebook& cb);
Codebook read_codebook_file(const std::string& path);
// Header line "K D seed iterations" followed by one centroid per line.
void export_codebook_text(std::ostream& os, const Codebook& cb);

}  // namespace avur

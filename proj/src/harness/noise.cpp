#include "avur/harness/noise.hpp"

#include <charconv>
#include <cmath>

namespace avur {

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "babble") return NoiseKind::babble;
  throw std::invalid_argument("unknown noise kind '" + s + "'");
}

const char* to_string(NoiseKind k) { return k == NoiseKind::gaussian ? "gaussian" : "babble"; }

std::string condition_name(double snr_db) {
  if (snr_db == kCleanSnr) return "clean";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, snr_db);
  return std::string(buf, res.ptr) + "dB";
}

double parse_condition(const std::string& s) {
  if (s == "clean" || s == "inf") return kCleanSnr;
  std::string num = s;
  if (num.size() > 2 && num.substr(num.size() - 2) == "dB") num.resize(num.size() - 2);
  double v = 0;
  auto res = std::from_chars(num.data(), num.data() + num.size(), v);
  if (res.ec != std::errc() || res.ptr != num.data() + num.size() || !std::isfinite(v))
    throw std::invalid_argument("bad SNR condition '" + s + "'");
  return v;
}

double feature_energy(const Matrix& m) {
  if (m.size() == 0) throw std::invalid_argument("feature_energy: empty matrix");
  return m.squaredNorm() / static_cast<double>(m.size());
}

double measured_snr_db(const Matrix& signal, const Matrix& noise) {
  return 10.0 * std::log10(feature_energy(signal) / feature_energy(noise));
}

Matrix make_noise(const FeatureSequence& audio, const NoiseSpec& spec, std::uint64_t seed) {
  if (std::isnan(spec.snr_db) || spec.snr_db == -kCleanSnr)
    throw std::invalid_argument("mix_noise: SNR must be finite or the clean sentinel");
  const Matrix& x = audio.frames;
  if (spec.clean()) return Matrix::Zero(x.rows(), x.cols());
  const double es = feature_energy(x);
  if (!(es > 0)) throw std::invalid_argument("mix_noise: zero-energy signal");
  Rng rng(seed);
  Matrix n = Matrix::Zero(x.rows(), x.cols());
  if (spec.kind == NoiseKind::gaussian) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = g(rng);
  } else {
    if (!spec.babble_pool || spec.babble_pool->size() < 3)
      throw std::invalid_argument("mix_noise: babble needs a pool of at least 3 streams");
    const auto& pool = *spec.babble_pool;
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::vector<size_t> chosen;
    while (chosen.size() < 3) {
      const size_t i = pick(rng);
      if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) chosen.push_back(i);
    }
    for (size_t i : chosen) {
      const Matrix& src = pool[i].frames;
      if (src.cols() != x.cols()) throw ShapeError("mix_noise: babble stream width mismatch");
      std::uniform_int_distribution<Eigen::Index> offset(0, src.rows() - 1);
      const Eigen::Index start = offset(rng);
      for (Eigen::Index r = 0; r < x.rows(); ++r) n.row(r) += src.row((start + r) % src.rows());
    }
  }
  const double en = feature_energy(n);
  if (!(en > 0)) throw std::runtime_error("mix_noise: generated zero-energy noise");
  n *= std::sqrt(es / (en * std::pow(10.0, spec.snr_db / 10.0)));
  return n;
}

FeatureSequence mix_noise(const FeatureSequence& audio, const NoiseSpec& spec, std::uint64_t seed) {
  if (spec.clean()) return audio;
  FeatureSequence out = audio;
  out.frames += make_noise(audio, spec, seed);
  return out;
}

}  // namespace avur

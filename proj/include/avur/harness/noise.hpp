#pragma once

#include "avur/encoders/encoders.hpp"

#include <limits>

namespace avur {

enum class NoiseKind { gaussian, babble };

inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

struct NoiseSpec {
  double snr_db = kCleanSnr;  // +inf means clean
  NoiseKind kind = NoiseKind::babble;
  // Raw audio streams babble is drawn from (3 per utterance).
  const std::vector<FeatureSequence>* babble_pool = nullptr;

  bool clean() const { return snr_db == kCleanSnr; }
};

NoiseKind parse_noise_kind(const std::string& s);
const char* to_string(NoiseKind k);

// "clean" or e.g. "0dB", "-5dB".
std::string condition_name(double snr_db);
double parse_condition(const std::string& s);

// Mean squared feature value.
double feature_energy(const Matrix& m);
double measured_snr_db(const Matrix& signal, const Matrix& noise);

// Adds noise scaled so 10 log10(E_signal / E_noise) equals snr_db, energies
// taken over feature values of the utterance. Babble is the sum of three pool
// streams, each tiled or cut to the utterance length.
FeatureSequence mix_noise(const FeatureSequence& audio, const NoiseSpec& spec, std::uint64_t seed);
Matrix make_noise(const FeatureSequence& audio, const NoiseSpec& spec, std::uint64_t seed);

}  // namespace avur

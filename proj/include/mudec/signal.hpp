#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace mudec {

// Exit-code mapping in the CLI: ParameterError -> 2, DataError -> 3,
// NumericalError -> 4.
struct ParameterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SignalUnits : std::uint8_t {
  volts = 0,
  newtons = 1,
  percent_mvf = 2,
  dimensionless = 3,
};

inline const char* to_string(SignalUnits u) {
  switch (u) {
    case SignalUnits::volts: return "volts";
    case SignalUnits::newtons: return "newtons";
    case SignalUnits::percent_mvf: return "percent_mvf";
    case SignalUnits::dimensionless: return "dimensionless";
  }
  return "?";
}

/// Uniformly sampled multichannel time series (rows = channels).
struct MultiChannelSignal {
  Eigen::MatrixXd data;  // channels x samples
  double sample_rate_hz = 0.0;
  std::vector<std::string> channel_labels;
  SignalUnits units = SignalUnits::dimensionless;

  Eigen::Index channels() const { return data.rows(); }
  Eigen::Index samples() const { return data.cols(); }
  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples()) / sample_rate_hz : 0.0;
  }

  void check_finite(const char* where) const {
    if (sample_rate_hz <= 0.0)
      throw DataError(std::string(where) + ": non-positive sample rate");
    if (!data.allFinite())
      throw NumericalError(std::string(where) + ": non-finite sample values");
  }

  static MultiChannelSignal like(const MultiChannelSignal& other, Eigen::MatrixXd new_data) {
    MultiChannelSignal out;
    out.data = std::move(new_data);
    out.sample_rate_hz = other.sample_rate_hz;
    out.channel_labels = other.channel_labels;
    out.units = other.units;
    return out;
  }
};

}  // namespace mudec

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbmc {

// Error taxonomy. The CLI maps these onto exit codes: config/structural -> 2,
// numerical/domain -> 3, accuracy -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AccuracyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;

// Dense row-major matrix of doubles. Rows are set elements, columns features.
class Mat {
  public:
    Mat() = default;
    Mat(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    void resize(int rows, int cols, double fill = 0.0) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(static_cast<size_t>(rows) * cols, fill);
    }
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Posterior model probabilities over a fixed model set.
struct PmpVector {
    std::vector<double> p;

    int size() const { return static_cast<int>(p.size()); }
    double operator[](int j) const { return p[j]; }

    // Entries in [0,1], finite, summing to 1 within 1e-9.
    void validate() const;
};

bool all_finite(std::span<const double> v);

// log(sum_i exp(x_i)), stabilized. Empty input is a domain error.
double logsumexp(std::span<const double> x);

// Standard normal cdf and pdf.
double norm_cdf(double x);
double norm_pdf(double x);

// Inverse standard normal cdf (Acklam's rational approximation plus one Halley
// refinement step; ~1e-15 absolute error on (0,1)).
double probit(double p);

std::string format_double(double v);

}  // namespace hbmc

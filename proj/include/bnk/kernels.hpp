#pragma once

#include <string>
#include <vector>

#include "bnk/numerics.hpp"

namespace bnk {

enum class KernelFamily { matern12, matern32, matern52, cosine, product, stack };

/// Stationary covariance function. Stacks model D independent latent functions;
/// every other family is scalar-valued.
class Kernel {
public:
    static Kernel matern12(double variance, double lengthscale);
    static Kernel matern32(double variance, double lengthscale);
    static Kernel matern52(double variance, double lengthscale);
    static Kernel cosine(double frequency, double variance = 1.0);
    static Kernel product(std::vector<Kernel> children);
    static Kernel stack(std::vector<Kernel> children);

    KernelFamily family() const { return family_; }
    double variance() const { return variance_; }
    double lengthscale() const { return lengthscale_; }
    double frequency() const { return frequency_; }
    const std::vector<Kernel>& children() const { return children_; }

    /// Number of latent functions (1 unless a stack).
    int output_dim() const;

    /// Scalar covariance between two inputs. Stacks are not scalar.
    double eval(const Vec& x, const Vec& x2) const;

    std::string describe() const;

private:
    KernelFamily family_ = KernelFamily::matern32;
    double variance_ = 1.0;
    double lengthscale_ = 1.0;
    double frequency_ = 0.0;
    std::vector<Kernel> children_;
};

/// Gram matrix of size (N D) x (M D), ordered site-major: row n*D + d.
Mat gram(const Kernel& k, const Mat& X, const Mat& X2);

struct StateSpaceModel {
    Mat F;    // S x S
    Mat L;    // S x r
    Mat Qc;   // r x r
    Mat H;    // D x S
    Mat P0;   // S x S

    int state_dim() const { return static_cast<int>(F.rows()); }
    int output_dim() const { return static_cast<int>(H.rows()); }
    Mat noise_covariance() const { return L * Qc * L.transpose(); }
};

StateSpaceModel to_state_space(const Kernel& k);

struct Transition {
    Mat A;
    Mat Q;
};

/// A = expm(F dt), Q = P0 - A P0 A'.
Transition discretize(const StateSpaceModel& ss, double dt);

}  // namespace bnk

#pragma once

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <vector>

namespace respilot {

/// One (cos, sin) row per angle. Rows of v_map outputs are unit length; after a residual is
/// added they need not be.
using AngleMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;

AngleMatrix v_map(const Eigen::VectorXd& angles);

/// Inverse of v_map: per-row atan2(sin, cos). Throws DegenerateRowError when a row's norm is
/// below `min_norm`.
Eigen::VectorXd angle_map(const AngleMatrix& rows, double min_norm = 1e-9);

/// Angular distance of each coordinate, arccos(V(a)_i . V(b)_i), in [0, pi]. Evaluated as
/// |atan2(cross, dot)| of the two unit rows.
Eigen::VectorXd angular_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// exp(-sum_i d_i^2 / (2 l_i^2)) with d the angular distance.
double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& lengthscales);

/// Pairwise kernel matrix over the rows of `inputs` (C x m), without noise.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& lengthscales);

/// Kernel vector k(x_s, query) over the rows of `inputs`.
Eigen::VectorXd kernel_vector(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& query,
                              const Eigen::VectorXd& lengthscales);

struct GpHyperparams {
    Eigen::VectorXd lengthscales;    // one per input angle, rad
    double noise_sigma = 0.1;
    Eigen::MatrixXd task_cov_chol;   // lower triangular, positive diagonal, outputs x outputs

    int inputs() const { return static_cast<int>(lengthscales.size()); }
    int outputs() const { return static_cast<int>(task_cov_chol.rows()); }
    Eigen::MatrixXd task_cov() const { return task_cov_chol * task_cov_chol.transpose(); }

    /// l_i = 1, sigma = 0.1, L_t = I.
    static GpHyperparams initial(int joints);
    /// Throws InvalidInput when an invariant does not hold.
    void validate() const;
};

/// K_q = K_t kron (K + sigma^2 I), dense, task-major ordering.
Eigen::MatrixXd build_covariance(const Eigen::MatrixXd& inputs, const GpHyperparams& hyper);

/// Targets laid out as a C x P matrix (row s = vectorized residual of sample s, column
/// o = 2*joint + {0: cos, 1: sin}). Column-major vec() of this matrix is the task-major
/// Q_r that matches K_t kron K_sigma.
Eigen::VectorXd task_major(const Eigen::MatrixXd& targets);
Eigen::RowVectorXd vectorize_residual(const AngleMatrix& residual);
AngleMatrix unvectorize_residual(const Eigen::RowVectorXd& row);

/// Gaussian log marginal likelihood of `targets` under a zero-mean GP (or constant mean
/// `mean`, one entry per output). Uses the Kronecker factorization; Cholesky with jitter.
double mll(const GpHyperparams& hyper, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
           const Eigen::RowVectorXd* mean = nullptr);

/// Unconstrained parameterization used by the optimizer:
///   [log l (m) | log sigma | L_t lower triangle, row-major, diagonal as log | mean (P, optional)]
struct HyperLayout {
    int joints = 0;
    int outputs = 0;
    bool has_mean = false;

    int size() const;
    Eigen::VectorXd pack(const GpHyperparams& hyper, const Eigen::RowVectorXd* mean = nullptr) const;
    GpHyperparams unpack(const Eigen::VectorXd& theta) const;
    Eigen::RowVectorXd unpack_mean(const Eigen::VectorXd& theta) const;
};

/// Value of -mll and its gradient with respect to the packed unconstrained parameters.
struct LossEvaluation {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

/// Precomputed squared angular distances for a fixed input set; reused every epoch.
class MllObjective {
public:
    MllObjective(Eigen::MatrixXd inputs, Eigen::MatrixXd targets, HyperLayout layout);

    const HyperLayout& layout() const { return layout_; }
    LossEvaluation evaluate(const Eigen::VectorXd& theta) const;

private:
    Eigen::MatrixXd inputs_;
    Eigen::MatrixXd targets_;
    HyperLayout layout_;
    std::vector<Eigen::MatrixXd> sq_dist_;  // per input dimension, C x C
};

struct GpTrainOptions {
    double lr = 0.01;
    int epochs = 3000;
    std::uint64_t seed = 0;
    bool learn_constant_mean = false;  // direct-GP baseline; residual GPs are zero-mean
    double init_noise_scale = 0.01;
};

struct GpTrainingLog {
    std::vector<double> loss;  // -mll before each Adam step, then the final value
    double initial_loss() const { return loss.empty() ? 0.0 : loss.front(); }
    double final_loss() const { return loss.empty() ? 0.0 : loss.back(); }
};

/// Per-finger multi-output GP with cached K_q^{-1} (Q_r - mean).
class TrainedFingerGP {
public:
    TrainedFingerGP() = default;
    /// Builds the cached solve; throws NoDataError on an empty input set.
    TrainedFingerGP(int finger, GpHyperparams hyper, Eigen::MatrixXd inputs, Eigen::MatrixXd targets,
                    Eigen::RowVectorXd mean = {});

    int finger() const { return finger_; }
    const GpHyperparams& hyper() const { return hyper_; }
    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const Eigen::MatrixXd& targets() const { return targets_; }
    const Eigen::RowVectorXd& mean() const { return mean_; }
    /// K_q^{-1} (Q_r - mean) as a C x P matrix (its column-major vec is the task-major vector).
    const Eigen::MatrixXd& cached_solve() const { return cached_solve_; }
    int samples() const { return static_cast<int>(inputs_.rows()); }
    int joints() const { return static_cast<int>(inputs_.cols()); }

    /// (K_t kron k*^T) K_q^{-1} Q_r + mean, reshaped to joints x 2.
    AngleMatrix posterior_mean(const Eigen::VectorXd& query) const;
    /// Predictive covariance of the latent outputs, K_t (k** - k*^T K_sigma^{-1} k*).
    Eigen::MatrixXd posterior_covariance(const Eigen::VectorXd& query) const;

    /// Relative residual ||K_q x - (Q_r - mean)|| / ||Q_r - mean|| of the cached solve.
    double solve_residual() const;

    nlohmann::json to_json() const;
    /// Restores the stored cached solve verbatim and checks it against a fresh solve.
    static TrainedFingerGP from_json(const nlohmann::json& doc);

private:
    int finger_ = 0;
    GpHyperparams hyper_;
    Eigen::MatrixXd inputs_;
    Eigen::MatrixXd targets_;
    Eigen::RowVectorXd mean_;
    Eigen::MatrixXd cached_solve_;
    Eigen::MatrixXd task_cov_;
};

/// Adam descent on -mll from a seeded perturbation of GpHyperparams::initial.
TrainedFingerGP train_finger_gp(int finger, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                const GpTrainOptions& options, GpTrainingLog* log = nullptr);

}  // namespace respilot

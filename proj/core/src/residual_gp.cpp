#include "respilot/residual_gp.hpp"

#include "respilot/errors.hpp"
#include "respilot/io.hpp"

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace respilot {

using nlohmann::json;

AngleMatrix v_map(const Eigen::VectorXd& angles) {
    AngleMatrix m(angles.size(), 2);
    m.col(0) = angles.array().cos();
    m.col(1) = angles.array().sin();
    return m;
}

Eigen::VectorXd angle_map(const AngleMatrix& rows, double min_norm) {
    Eigen::VectorXd out(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const double n = rows.row(i).norm();
        if (!(n >= min_norm))
            throw DegenerateRowError("angle_map: row " + std::to_string(i) + " has near-zero norm",
                                     static_cast<int>(i));
        out[i] = std::atan2(rows(i, 1), rows(i, 0));
    }
    return out;
}

Eigen::VectorXd angular_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw InvalidInput("angular_distance: length mismatch");
    Eigen::VectorXd d(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        // Same angle as arccos(V(a).V(b)), but atan2 of (cross, dot) stays accurate near zero
        // and is exactly 0 for identical angles.
        const double ca = std::cos(a[i]), sa = std::sin(a[i]), cb = std::cos(b[i]), sb = std::sin(b[i]);
        d[i] = std::abs(std::atan2(sa * cb - ca * sb, ca * cb + sa * sb));
    }
    return d;
}

double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& lengthscales) {
    if (a.size() != lengthscales.size() || b.size() != lengthscales.size())
        throw InvalidInput("kernel: inputs and lengthscales must have equal length");
    const Eigen::VectorXd d = angular_distance(a, b);
    return std::exp(-0.5 * (d.array() / lengthscales.array()).square().sum());
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& lengthscales) {
    const Eigen::Index c = inputs.rows();
    Eigen::MatrixXd k(c, c);
    for (Eigen::Index a = 0; a < c; ++a) {
        k(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < c; ++b) {
            k(a, b) = kernel(inputs.row(a).transpose(), inputs.row(b).transpose(), lengthscales);
            k(b, a) = k(a, b);
        }
    }
    return k;
}

Eigen::VectorXd kernel_vector(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& query,
                              const Eigen::VectorXd& lengthscales) {
    Eigen::VectorXd k(inputs.rows());
    for (Eigen::Index s = 0; s < inputs.rows(); ++s)
        k[s] = kernel(inputs.row(s).transpose(), query, lengthscales);
    return k;
}

GpHyperparams GpHyperparams::initial(int joints) {
    GpHyperparams h;
    h.lengthscales = Eigen::VectorXd::Ones(joints);
    h.noise_sigma = 0.1;
    h.task_cov_chol = Eigen::MatrixXd::Identity(2 * joints, 2 * joints);
    return h;
}

void GpHyperparams::validate() const {
    if (lengthscales.size() < 1) throw InvalidInput("gp hyperparams: no lengthscales");
    if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite())
        throw InvalidInput("gp hyperparams: lengthscales must be finite and > 0");
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma))
        throw InvalidInput("gp hyperparams: noise_sigma must be finite and > 0");
    if (task_cov_chol.rows() != 2 * lengthscales.size() || task_cov_chol.cols() != task_cov_chol.rows())
        throw InvalidInput("gp hyperparams: task_cov_chol must be 2m x 2m");
    if (!task_cov_chol.allFinite()) throw InvalidInput("gp hyperparams: non-finite task_cov_chol");
    for (Eigen::Index i = 0; i < task_cov_chol.rows(); ++i) {
        if (!(task_cov_chol(i, i) > 0.0))
            throw InvalidInput("gp hyperparams: task_cov_chol needs a positive diagonal");
        for (Eigen::Index j = i + 1; j < task_cov_chol.cols(); ++j)
            if (task_cov_chol(i, j) != 0.0) throw InvalidInput("gp hyperparams: task_cov_chol must be lower triangular");
    }
}

Eigen::MatrixXd build_covariance(const Eigen::MatrixXd& inputs, const GpHyperparams& hyper) {
    hyper.validate();
    if (inputs.rows() < 1) throw NoDataError("build_covariance: no samples");
    if (inputs.cols() != hyper.inputs()) throw InvalidInput("build_covariance: input width mismatch");
    Eigen::MatrixXd ks = kernel_matrix(inputs, hyper.lengthscales);
    ks.diagonal().array() += hyper.noise_sigma * hyper.noise_sigma;
    const Eigen::MatrixXd kt = hyper.task_cov();
    const Eigen::Index c = ks.rows();
    const Eigen::Index p = kt.rows();
    Eigen::MatrixXd kq(p * c, p * c);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) kq.block(i * c, j * c, c, c) = kt(i, j) * ks;
    return kq;
}

Eigen::VectorXd task_major(const Eigen::MatrixXd& targets) {
    return Eigen::Map<const Eigen::VectorXd>(targets.data(), targets.size());
}

Eigen::RowVectorXd vectorize_residual(const AngleMatrix& residual) {
    Eigen::RowVectorXd row(2 * residual.rows());
    for (Eigen::Index i = 0; i < residual.rows(); ++i) {
        row[2 * i] = residual(i, 0);
        row[2 * i + 1] = residual(i, 1);
    }
    return row;
}

AngleMatrix unvectorize_residual(const Eigen::RowVectorXd& row) {
    AngleMatrix m(row.size() / 2, 2);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, 0) = row[2 * i];
        m(i, 1) = row[2 * i + 1];
    }
    return m;
}

namespace {

constexpr double kJitterStart = 1e-8;
constexpr double kJitterMax = 1e-4;

/// Cholesky of a symmetric matrix, retrying with diagonal jitter 1e-8, 2e-8, ... up to 1e-4.
Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& m, std::string_view what) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt;
    for (double jitter = kJitterStart; jitter <= kJitterMax * (1.0 + 1e-12); jitter *= 2.0) {
        Eigen::MatrixXd mj = m;
        mj.diagonal().array() += jitter;
        llt.compute(mj);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw IllConditionedError(std::string(what) + ": Cholesky failed after maximum jitter");
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Pieces shared by the value and gradient: A = K_sigma^{-1} Yc K_t^{-1}.
struct KronSolve {
    Eigen::MatrixXd k;        // noiseless kernel matrix
    Eigen::LLT<Eigen::MatrixXd> ks_llt;
    Eigen::MatrixXd a;
    Eigen::MatrixXd yc;
    double value = 0.0;       // mll
};

KronSolve kron_solve(const Eigen::MatrixXd& k, const GpHyperparams& hyper, const Eigen::MatrixXd& targets,
                     const Eigen::RowVectorXd* mean) {
    KronSolve s;
    s.k = k;
    const Eigen::Index c = k.rows();
    const Eigen::Index p = hyper.outputs();
    Eigen::MatrixXd ks = k;
    ks.diagonal().array() += hyper.noise_sigma * hyper.noise_sigma;
    s.ks_llt = factor_spd(ks, "K_sigma");
    const Eigen::MatrixXd& lt = hyper.task_cov_chol;

    s.yc = targets;
    if (mean && mean->size() == p) s.yc.rowwise() -= *mean;
    // K_t^{-1} = L^{-T} L^{-1}; apply from the right via triangular solves.
    Eigen::MatrixXd left = s.ks_llt.solve(s.yc);  // C x P
    Eigen::MatrixXd tmp = lt.triangularView<Eigen::Lower>().solve(left.transpose());  // P x C
    tmp = lt.transpose().triangularView<Eigen::Upper>().solve(tmp);
    s.a = tmp.transpose();

    const double quad = (s.yc.array() * s.a.array()).sum();
    const double logdet_t = 2.0 * lt.diagonal().array().log().sum();
    const double logdet = static_cast<double>(c) * logdet_t + static_cast<double>(p) * log_det(s.ks_llt);
    const double n = static_cast<double>(c * p);
    s.value = -0.5 * quad - 0.5 * logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
    return s;
}

}  // namespace

double mll(const GpHyperparams& hyper, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
           const Eigen::RowVectorXd* mean) {
    hyper.validate();
    if (inputs.rows() < 1) throw NoDataError("mll: no samples");
    if (inputs.cols() != hyper.inputs() || targets.rows() != inputs.rows() || targets.cols() != hyper.outputs())
        throw InvalidInput("mll: inputs/targets do not match the hyperparameter shapes");
    return kron_solve(kernel_matrix(inputs, hyper.lengthscales), hyper, targets, mean).value;
}

// --- packing --------------------------------------------------------------------------------

int HyperLayout::size() const { return joints + 1 + outputs * (outputs + 1) / 2 + (has_mean ? outputs : 0); }

Eigen::VectorXd HyperLayout::pack(const GpHyperparams& hyper, const Eigen::RowVectorXd* mean) const {
    Eigen::VectorXd theta(size());
    int k = 0;
    for (int i = 0; i < joints; ++i) theta[k++] = std::log(hyper.lengthscales[i]);
    theta[k++] = std::log(hyper.noise_sigma);
    for (int i = 0; i < outputs; ++i)
        for (int j = 0; j <= i; ++j)
            theta[k++] = i == j ? std::log(hyper.task_cov_chol(i, i)) : hyper.task_cov_chol(i, j);
    if (has_mean)
        for (int o = 0; o < outputs; ++o) theta[k++] = mean ? (*mean)[o] : 0.0;
    return theta;
}

GpHyperparams HyperLayout::unpack(const Eigen::VectorXd& theta) const {
    GpHyperparams h;
    h.lengthscales.resize(joints);
    int k = 0;
    for (int i = 0; i < joints; ++i) h.lengthscales[i] = std::exp(theta[k++]);
    h.noise_sigma = std::exp(theta[k++]);
    h.task_cov_chol = Eigen::MatrixXd::Zero(outputs, outputs);
    for (int i = 0; i < outputs; ++i)
        for (int j = 0; j <= i; ++j) h.task_cov_chol(i, j) = i == j ? std::exp(theta[k++]) : theta[k++];
    return h;
}

Eigen::RowVectorXd HyperLayout::unpack_mean(const Eigen::VectorXd& theta) const {
    if (!has_mean) return Eigen::RowVectorXd::Zero(outputs);
    return theta.tail(outputs).transpose();
}

MllObjective::MllObjective(Eigen::MatrixXd inputs, Eigen::MatrixXd targets, HyperLayout layout)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), layout_(layout) {
    if (inputs_.rows() < 1) throw NoDataError("mll objective: no samples");
    if (inputs_.cols() != layout_.joints || targets_.cols() != layout_.outputs || targets_.rows() != inputs_.rows())
        throw InvalidInput("mll objective: shape mismatch");
    const Eigen::Index c = inputs_.rows();
    sq_dist_.assign(static_cast<std::size_t>(layout_.joints), Eigen::MatrixXd::Zero(c, c));
    for (Eigen::Index a = 0; a < c; ++a)
        for (Eigen::Index b = a + 1; b < c; ++b) {
            const Eigen::VectorXd d = angular_distance(inputs_.row(a).transpose(), inputs_.row(b).transpose());
            for (int i = 0; i < layout_.joints; ++i) {
                sq_dist_[static_cast<std::size_t>(i)](a, b) = d[i] * d[i];
                sq_dist_[static_cast<std::size_t>(i)](b, a) = d[i] * d[i];
            }
        }
}

LossEvaluation MllObjective::evaluate(const Eigen::VectorXd& theta) const {
    const GpHyperparams hyper = layout_.unpack(theta);
    const Eigen::RowVectorXd mean = layout_.unpack_mean(theta);
    const Eigen::Index c = inputs_.rows();
    const int p = layout_.outputs;

    Eigen::MatrixXd expo = Eigen::MatrixXd::Zero(c, c);
    for (int i = 0; i < layout_.joints; ++i)
        expo += sq_dist_[static_cast<std::size_t>(i)] / (hyper.lengthscales[i] * hyper.lengthscales[i]);
    const Eigen::MatrixXd k = (-0.5 * expo).array().exp().matrix();

    const KronSolve s = kron_solve(k, hyper, targets_, layout_.has_mean ? &mean : nullptr);
    const Eigen::MatrixXd kt = hyper.task_cov();
    const Eigen::MatrixXd& lt = hyper.task_cov_chol;
    const Eigen::MatrixXd ks_inv = s.ks_llt.solve(Eigen::MatrixXd::Identity(c, c));
    Eigen::MatrixXd lt_inv = lt.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd kt_inv = lt_inv.transpose() * lt_inv;

    // d mll / d K_sigma and d mll / d K_t (both symmetric).
    const Eigen::MatrixXd g_sigma = 0.5 * (s.a * kt * s.a.transpose() - static_cast<double>(p) * ks_inv);
    const Eigen::MatrixXd ua = s.ks_llt.matrixU() * s.a;  // A^T K_sigma A = (U A)^T (U A)
    const Eigen::MatrixXd g_task = 0.5 * (ua.transpose() * ua - static_cast<double>(c) * kt_inv);

    LossEvaluation out;
    out.loss = -s.value;
    out.grad.resize(layout_.size());
    int idx = 0;
    for (int i = 0; i < layout_.joints; ++i) {
        const double l2 = hyper.lengthscales[i] * hyper.lengthscales[i];
        const double d = (g_sigma.array() * k.array() * sq_dist_[static_cast<std::size_t>(i)].array()).sum() / l2;
        out.grad[idx++] = -d;
    }
    const double s2 = hyper.noise_sigma * hyper.noise_sigma;
    out.grad[idx++] = -(g_sigma.trace() * 2.0 * s2);
    const Eigen::MatrixXd g_chol = 2.0 * g_task * lt;
    for (int i = 0; i < p; ++i)
        for (int j = 0; j <= i; ++j) out.grad[idx++] = -(i == j ? g_chol(i, i) * lt(i, i) : g_chol(i, j));
    if (layout_.has_mean) {
        const Eigen::RowVectorXd gm = s.a.colwise().sum();
        for (int o = 0; o < p; ++o) out.grad[idx++] = -gm[o];
    }
    return out;
}

// --- trained model --------------------------------------------------------------------------

TrainedFingerGP::TrainedFingerGP(int finger, GpHyperparams hyper, Eigen::MatrixXd inputs, Eigen::MatrixXd targets,
                                 Eigen::RowVectorXd mean)
    : finger_(finger), hyper_(std::move(hyper)), inputs_(std::move(inputs)), targets_(std::move(targets)),
      mean_(std::move(mean)) {
    hyper_.validate();
    if (inputs_.rows() < 1) throw NoDataError("finger " + std::to_string(finger_) + ": no training samples");
    if (inputs_.cols() != hyper_.inputs() || targets_.rows() != inputs_.rows() || targets_.cols() != hyper_.outputs())
        throw InvalidInput("finger gp: inputs/targets do not match the hyperparameter shapes");
    if (mean_.size() == 0) mean_ = Eigen::RowVectorXd::Zero(hyper_.outputs());
    if (mean_.size() != hyper_.outputs()) throw InvalidInput("finger gp: mean has wrong length");
    task_cov_ = hyper_.task_cov();
    cached_solve_ = kron_solve(kernel_matrix(inputs_, hyper_.lengthscales), hyper_, targets_, &mean_).a;
}

AngleMatrix TrainedFingerGP::posterior_mean(const Eigen::VectorXd& query) const {
    if (query.size() != joints()) throw InvalidInput("posterior_mean: query has wrong length");
    const Eigen::VectorXd k = kernel_vector(inputs_, query, hyper_.lengthscales);
    const Eigen::RowVectorXd out = k.transpose() * cached_solve_ * task_cov_ + mean_;
    return unvectorize_residual(out);
}

Eigen::MatrixXd TrainedFingerGP::posterior_covariance(const Eigen::VectorXd& query) const {
    if (query.size() != joints()) throw InvalidInput("posterior_covariance: query has wrong length");
    Eigen::MatrixXd ks = kernel_matrix(inputs_, hyper_.lengthscales);
    ks.diagonal().array() += hyper_.noise_sigma * hyper_.noise_sigma;
    const Eigen::VectorXd k = kernel_vector(inputs_, query, hyper_.lengthscales);
    const double reduction = k.dot(factor_spd(ks, "K_sigma").solve(k));
    return task_cov_ * (1.0 - reduction);
}

double TrainedFingerGP::solve_residual() const {
    const Eigen::MatrixXd kq = build_covariance(inputs_, hyper_);
    Eigen::MatrixXd yc = targets_;
    yc.rowwise() -= mean_;
    const Eigen::VectorXd rhs = task_major(yc);
    const double denom = std::max(rhs.norm(), 1e-300);
    return (kq * task_major(cached_solve_) - rhs).norm() / denom;
}

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows, Eigen::Index cols, const std::string& ctx) {
    if (!rows.is_array()) throw ParseError(ctx + ": expected an array of rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Eigen::VectorXd r = vector_from_json(rows[i], ctx + "[" + std::to_string(i) + "]");
        if (r.size() != cols) throw ParseError(ctx + "[" + std::to_string(i) + "]: wrong row length");
        m.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return m;
}

}  // namespace

json TrainedFingerGP::to_json() const {
    return {{"finger", finger_},
            {"lengthscales", vector_to_json(hyper_.lengthscales)},
            {"noise_sigma", hyper_.noise_sigma},
            {"task_cov_chol", matrix_json(hyper_.task_cov_chol)},
            {"mean", vector_to_json(mean_.transpose())},
            {"inputs", matrix_json(inputs_)},
            {"targets", matrix_json(targets_)},
            {"cached_solve", matrix_json(cached_solve_)}};
}

TrainedFingerGP TrainedFingerGP::from_json(const json& doc) {
    const std::string ctx = "finger gp";
    try {
        const int finger = require_field(doc, "finger", ctx).get<int>();
        GpHyperparams hyper;
        hyper.lengthscales = vector_from_json(require_field(doc, "lengthscales", ctx), ctx + ".lengthscales");
        hyper.noise_sigma = require_field(doc, "noise_sigma", ctx).get<double>();
        const Eigen::Index m = hyper.lengthscales.size();
        hyper.task_cov_chol = matrix_from_json(require_field(doc, "task_cov_chol", ctx), 2 * m, ctx + ".task_cov_chol");
        const Eigen::RowVectorXd mean =
            vector_from_json(require_field(doc, "mean", ctx), ctx + ".mean").transpose();
        Eigen::MatrixXd inputs = matrix_from_json(require_field(doc, "inputs", ctx), m, ctx + ".inputs");
        Eigen::MatrixXd targets = matrix_from_json(require_field(doc, "targets", ctx), 2 * m, ctx + ".targets");
        const Eigen::MatrixXd stored = matrix_from_json(require_field(doc, "cached_solve", ctx), 2 * m, ctx + ".cached_solve");
        TrainedFingerGP gp(finger, std::move(hyper), std::move(inputs), std::move(targets), mean);
        if (stored.rows() != gp.cached_solve_.rows())
            throw ParseError(ctx + ": cached_solve has wrong shape");
        const double scale = std::max(gp.cached_solve_.norm(), 1e-300);
        if ((stored - gp.cached_solve_).norm() > 1e-8 * scale)
            throw ValidationError(ctx + ": stored cached_solve disagrees with the hyperparameters");
        gp.cached_solve_ = stored;
        return gp;
    } catch (const json::exception& e) {
        throw ParseError(ctx + ": " + e.what());
    }
}

TrainedFingerGP train_finger_gp(int finger, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                const GpTrainOptions& options, GpTrainingLog* log) {
    if (inputs.rows() < 1) throw NoDataError("finger " + std::to_string(finger) + ": no training samples");
    if (!(options.lr > 0.0) || options.epochs < 0) throw InvalidInput("train_finger_gp: bad lr/epochs");
    const int m = static_cast<int>(inputs.cols());
    HyperLayout layout{m, 2 * m, options.learn_constant_mean};

    Eigen::RowVectorXd mean0;
    if (options.learn_constant_mean) mean0 = targets.colwise().mean();
    Eigen::VectorXd theta = layout.pack(GpHyperparams::initial(m), options.learn_constant_mean ? &mean0 : nullptr);
    Rng rng(options.seed);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += options.init_noise_scale * rng.normal();

    const MllObjective objective(inputs, targets, layout);
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
    double b1t = 1.0;
    double b2t = 1.0;

    auto evaluate = [&](int epoch) {
        try {
            LossEvaluation ev = objective.evaluate(theta);
            if (!std::isfinite(ev.loss) || !ev.grad.allFinite())
                throw TrainingDivergedError("finger " + std::to_string(finger) + ": non-finite loss at epoch " +
                                                std::to_string(epoch),
                                            epoch);
            return ev;
        } catch (const IllConditionedError& e) {
            throw TrainingDivergedError("finger " + std::to_string(finger) + ": " + e.what() + " at epoch " +
                                            std::to_string(epoch),
                                        epoch);
        }
    };

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const LossEvaluation ev = evaluate(epoch);
        if (log) log->loss.push_back(ev.loss);
        b1t *= kBeta1;
        b2t *= kBeta2;
        m1 = kBeta1 * m1 + (1.0 - kBeta1) * ev.grad;
        m2 = kBeta2 * m2 + (1.0 - kBeta2) * ev.grad.cwiseAbs2();
        const Eigen::VectorXd m_hat = m1 / (1.0 - b1t);
        const Eigen::VectorXd v_hat = m2 / (1.0 - b2t);
        theta -= (options.lr * m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();
    }
    if (log) log->loss.push_back(evaluate(options.epochs).loss);

    return TrainedFingerGP(finger, layout.unpack(theta), inputs, targets, layout.unpack_mean(theta));
}

}  // namespace respilot

#include "npdiff/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "npdiff/errors.hpp"

namespace npdiff {

void DenoiserDims::validate() const {
    auto require = [](bool ok, const char *field, const char *what) {
        if (!ok) {
            throw ConfigError(std::string("model.") + field + ": " + what);
        }
    };
    require(width >= 1, "width", "must be >= 1");
    require(layers >= 1, "layers", "must be >= 1");
    require(embed >= 2 && embed % 2 == 0, "embed", "must be a positive even number");
    require(nodes >= 1, "nodes", "must be >= 1");
    require(horizon >= 1, "horizon", "must be >= 1");
    require(context >= 1, "context", "must be >= 1");
    require(channels >= 1, "channels", "must be >= 1");
    require(period_buckets >= 1, "period_buckets", "must be >= 1");
}

DenoiserParams DenoiserParams::zeros_like() const {
    DenoiserParams out = *this;
    out.for_each([](const std::string &, Matrix &m) { m.setZero(); });
    return out;
}

std::size_t DenoiserParams::count() const {
    std::size_t n = 0;
    for_each([&](const std::string &, const Matrix &m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

bool DenoiserParams::all_finite() const {
    bool ok = true;
    for_each([&](const std::string &, const Matrix &m) { ok = ok && m.allFinite(); });
    return ok;
}

bool operator==(const DenoiserParams &a, const DenoiserParams &b) {
    std::vector<const Matrix *> left;
    std::vector<const Matrix *> right;
    a.for_each([&](const std::string &, const Matrix &m) { left.push_back(&m); });
    b.for_each([&](const std::string &, const Matrix &m) { right.push_back(&m); });
    if (left.size() != right.size()) {
        return false;
    }
    for (std::size_t i = 0; i < left.size(); ++i) {
        if (left[i]->rows() != right[i]->rows() || left[i]->cols() != right[i]->cols() || *left[i] != *right[i]) {
            return false;
        }
    }
    return true;
}

namespace {

Matrix uniform_matrix(CounterRng rng, Eigen::Index rows, Eigen::Index cols, double bound) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
        }
    }
    return m;
}

DenoiserParams init_params(const DenoiserDims &d, std::uint64_t seed) {
    d.validate();
    const CounterRng root = CounterRng(seed).substream("init");
    const Eigen::Index E = d.embed;
    const Eigen::Index W = d.width;
    const Eigen::Index in_cols = static_cast<Eigen::Index>(d.context + d.horizon) * d.channels;
    const Eigen::Index out_cols = static_cast<Eigen::Index>(d.horizon) * d.channels;
    const auto fan_in = [](Eigen::Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
    const auto xavier = [](Eigen::Index a, Eigen::Index b) { return std::sqrt(6.0 / static_cast<double>(a + b)); };

    DenoiserParams p;
    p.w_in = uniform_matrix(root.substream("w_in"), in_cols, E, fan_in(in_cols));
    p.b_in = Matrix::Zero(1, E);
    p.node_emb = uniform_matrix(root.substream("node_emb"), d.nodes, E, xavier(d.nodes, E));
    p.period_emb = uniform_matrix(root.substream("period_emb"), d.period_buckets, E, xavier(d.period_buckets, E));
    p.w_step = uniform_matrix(root.substream("w_step"), E, E, fan_in(E));
    p.b_step = Matrix::Zero(1, E);
    for (int l = 0; l < d.layers; ++l) {
        const Eigen::Index rows = l == 0 ? 4 * E : W;
        p.w_hidden.push_back(
            uniform_matrix(root.substream("w_hidden").substream(static_cast<std::uint64_t>(l)), rows, W, fan_in(rows)));
        p.b_hidden.push_back(Matrix::Zero(1, W));
    }
    p.w_out = Matrix::Zero(W, out_cols);
    p.b_out = Matrix::Zero(1, out_cols);
    return p;
}

void check_shapes(const DenoiserDims &d, const DenoiserParams &p) {
    const Eigen::Index E = d.embed;
    const Eigen::Index W = d.width;
    const Eigen::Index in_cols = static_cast<Eigen::Index>(d.context + d.horizon) * d.channels;
    const Eigen::Index out_cols = static_cast<Eigen::Index>(d.horizon) * d.channels;
    auto expect = [](const Matrix &m, Eigen::Index r, Eigen::Index c, const char *name) {
        if (m.rows() != r || m.cols() != c) {
            std::ostringstream msg;
            msg << "parameter " << name << " is " << m.rows() << "x" << m.cols() << ", expected " << r << "x" << c;
            throw DataError(msg.str());
        }
    };
    expect(p.w_in, in_cols, E, "w_in");
    expect(p.b_in, 1, E, "b_in");
    expect(p.node_emb, d.nodes, E, "node_emb");
    expect(p.period_emb, d.period_buckets, E, "period_emb");
    expect(p.w_step, E, E, "w_step");
    expect(p.b_step, 1, E, "b_step");
    if (p.w_hidden.size() != static_cast<std::size_t>(d.layers) || p.b_hidden.size() != p.w_hidden.size()) {
        throw DataError("hidden layer count does not match dims");
    }
    for (int l = 0; l < d.layers; ++l) {
        expect(p.w_hidden[static_cast<std::size_t>(l)], l == 0 ? 4 * E : W, W, "w_hidden");
        expect(p.b_hidden[static_cast<std::size_t>(l)], 1, W, "b_hidden");
    }
    expect(p.w_out, W, out_cols, "w_out");
    expect(p.b_out, 1, out_cols, "b_out");
}

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Matrix silu(const Matrix &z) {
    return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_grad(const Matrix &z) {
    return z.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
    });
}

} // namespace

Eigen::RowVectorXd step_encoding(int n, int E) {
    Eigen::RowVectorXd code(E);
    const int half = E / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        code(i) = std::sin(static_cast<double>(n) * freq);
        code(half + i) = std::cos(static_cast<double>(n) * freq);
    }
    return code;
}

Denoiser::Denoiser(const DenoiserDims &dims, std::uint64_t seed)
    : dims_(dims), seed_(seed), params_(init_params(dims, seed)) {}

Denoiser::Denoiser(const DenoiserDims &dims, std::uint64_t seed, DenoiserParams params)
    : dims_(dims), seed_(seed), params_(std::move(params)) {
    dims_.validate();
    check_shapes(dims_, params_);
}

Matrix Denoiser::predict(const Matrix &x_n, std::span<const int> steps, const Conditioning &cond) const {
    return forward(x_n, steps, cond, nullptr);
}

Matrix Denoiser::forward(const Matrix &x_n, std::span<const int> steps, const Conditioning &cond,
                         Cache *cache) const {
    const Eigen::Index E = dims_.embed;
    const auto K = static_cast<std::size_t>(dims_.nodes);
    const Eigen::Index R = x_n.rows();
    if (cond.nodes != K || static_cast<Eigen::Index>(cond.rows()) != R ||
        x_n.cols() != static_cast<Eigen::Index>(dims_.horizon) * dims_.channels ||
        cond.context.cols() != static_cast<Eigen::Index>(dims_.context) * dims_.channels ||
        steps.size() != cond.items || cond.target_start.size() != cond.items) {
        throw std::invalid_argument("denoiser input shape does not match model dims");
    }

    Cache local;
    Cache &c = cache != nullptr ? *cache : local;
    c.inputs.resize(R, cond.context.cols() + x_n.cols());
    c.inputs << cond.context, x_n;
    c.step_code.resize(R, E);
    c.node.resize(static_cast<std::size_t>(R));
    c.phase.resize(static_cast<std::size_t>(R));
    const auto buckets = static_cast<std::int64_t>(dims_.period_buckets);
    for (std::size_t b = 0; b < cond.items; ++b) {
        const Eigen::RowVectorXd code = step_encoding(steps[b], dims_.embed);
        const auto ph = static_cast<std::size_t>(((cond.target_start[b] % buckets) + buckets) % buckets);
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t r = b * K + k;
            c.step_code.row(static_cast<Eigen::Index>(r)) = code;
            c.node[r] = k;
            c.phase[r] = ph;
        }
    }

    c.h0.resize(R, 4 * E);
    c.h0.leftCols(E) = c.inputs * params_.w_in;
    c.h0.leftCols(E).rowwise() += params_.b_in.row(0);
    for (Eigen::Index r = 0; r < R; ++r) {
        c.h0.block(r, E, 1, E) = params_.node_emb.row(static_cast<Eigen::Index>(c.node[static_cast<std::size_t>(r)]));
        c.h0.block(r, 2 * E, 1, E) =
            params_.period_emb.row(static_cast<Eigen::Index>(c.phase[static_cast<std::size_t>(r)]));
    }
    c.h0.rightCols(E) = c.step_code * params_.w_step;
    c.h0.rightCols(E).rowwise() += params_.b_step.row(0);

    c.pre.clear();
    c.post.clear();
    const Matrix *h = &c.h0;
    for (std::size_t l = 0; l < params_.w_hidden.size(); ++l) {
        Matrix z = (*h) * params_.w_hidden[l];
        z.rowwise() += params_.b_hidden[l].row(0);
        Matrix a = silu(z);
        if (l > 0) {
            a += *h;
        }
        c.pre.push_back(std::move(z));
        c.post.push_back(std::move(a));
        h = &c.post.back();
    }
    Matrix out = (*h) * params_.w_out;
    out.rowwise() += params_.b_out.row(0);
    return out;
}

void Denoiser::backward(const Cache &c, const Matrix &d_out, DenoiserParams &g) const {
    const Eigen::Index E = dims_.embed;
    const std::size_t L = params_.w_hidden.size();
    const Matrix &top = c.post.back();
    g.w_out.noalias() += top.transpose() * d_out;
    g.b_out += d_out.colwise().sum();
    Matrix dh = d_out * params_.w_out.transpose();
    for (std::size_t l = L; l-- > 0;) {
        const Matrix &input = l == 0 ? c.h0 : c.post[l - 1];
        const Matrix dz = dh.cwiseProduct(silu_grad(c.pre[l]));
        g.w_hidden[l].noalias() += input.transpose() * dz;
        g.b_hidden[l] += dz.colwise().sum();
        Matrix d_input = dz * params_.w_hidden[l].transpose();
        if (l > 0) {
            d_input += dh;  // residual path
        }
        dh = std::move(d_input);
    }
    const auto d_in = dh.leftCols(E);
    g.w_in.noalias() += c.inputs.transpose() * d_in;
    g.b_in += d_in.colwise().sum();
    for (Eigen::Index r = 0; r < dh.rows(); ++r) {
        g.node_emb.row(static_cast<Eigen::Index>(c.node[static_cast<std::size_t>(r)])) += dh.block(r, E, 1, E);
        g.period_emb.row(static_cast<Eigen::Index>(c.phase[static_cast<std::size_t>(r)])) += dh.block(r, 2 * E, 1, E);
    }
    const auto d_step = dh.rightCols(E);
    g.w_step.noalias() += c.step_code.transpose() * d_step;
    g.b_step += d_step.colwise().sum();
}

LossResult loss_and_grads(const Denoiser &model, const TrainingBatch &batch, const PriorConfig &cfg,
                          const NoiseSchedule &sched, CounterRng rng) {
    cfg.validate();
    const bool use_prior = cfg.kind != PriorKind::none;
    if (use_prior && batch.prior.size() == 0) {
        throw std::invalid_argument("loss_and_grads: prior dynamics missing for a prior-enabled config");
    }
    const std::size_t B = batch.cond.items;
    const std::size_t K = batch.cond.nodes;
    if (B == 0) {
        throw std::invalid_argument("loss_and_grads: empty batch");
    }
    const Eigen::Index rows = batch.target.rows();
    const Eigen::Index cols = batch.target.cols();

    std::vector<int> steps(B);
    for (int &n : steps) {
        n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
    }
    Matrix eps(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            eps(i, j) = rng.normal();
        }
    }

    Matrix x_n(rows, cols);
    Matrix eps_tilde;
    if (use_prior) {
        eps_tilde.resize(rows, cols);
    }
    for (std::size_t b = 0; b < B; ++b) {
        const int n = steps[b];
        const auto r0 = static_cast<Eigen::Index>(b * K);
        const auto nk = static_cast<Eigen::Index>(K);
        x_n.middleRows(r0, nk) = forward_diffuse(batch.target.middleRows(r0, nk), n, eps.middleRows(r0, nk), sched);
        if (use_prior) {
            eps_tilde.middleRows(r0, nk) = noise_prior(x_n.middleRows(r0, nk), batch.prior.middleRows(r0, nk), n, sched);
        }
    }

    Denoiser::Cache cache;
    const Matrix eps_theta = model.forward(x_n, steps, batch.cond, &cache);
    const Matrix eps_hat = use_prior ? fuse_noise(eps_tilde, eps_theta, cfg.lambda) : eps_theta;
    const Matrix diff = eps - eps_hat;
    const auto numel = static_cast<double>(diff.size());

    LossResult result;
    result.loss = diff.squaredNorm() / numel;
    result.depends_on_params = cfg.lambda < 1.0;
    result.grads = model.params().zeros_like();
    if (!std::isfinite(result.loss)) {
        throw NumericError("non-finite training loss");
    }
    const Matrix d_out = (-2.0 * (1.0 - cfg.lambda) / numel) * diff;
    model.backward(cache, d_out, result.grads);
    return result;
}

AdamOptimizer::AdamOptimizer(const DenoiserParams &like, AdamConfig cfg)
    : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

void AdamOptimizer::step(DenoiserParams &params, const DenoiserParams &grads, double lr) {
    std::string bad;
    grads.for_each([&](const std::string &name, const Matrix &g) {
        if (bad.empty() && !g.allFinite()) {
            bad = name;
        }
    });
    if (!bad.empty()) {
        throw NumericError("non-finite gradient in " + bad + "; update rejected");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    std::vector<Matrix *> p_list, m_list, v_list;
    std::vector<const Matrix *> g_list;
    params.for_each([&](const std::string &, Matrix &m) { p_list.push_back(&m); });
    m_.for_each([&](const std::string &, Matrix &m) { m_list.push_back(&m); });
    v_.for_each([&](const std::string &, Matrix &m) { v_list.push_back(&m); });
    grads.for_each([&](const std::string &, const Matrix &m) { g_list.push_back(&m); });
    if (p_list.size() != g_list.size() || p_list.size() != m_list.size()) {
        throw std::invalid_argument("adam: parameter and gradient layouts differ");
    }
    for (std::size_t i = 0; i < p_list.size(); ++i) {
        Matrix &p = *p_list[i];
        Matrix &m = *m_list[i];
        Matrix &v = *v_list[i];
        const Matrix &g = *g_list[i];
        if (p.rows() != g.rows() || p.cols() != g.cols()) {
            throw std::invalid_argument("adam: gradient shape mismatch");
        }
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const Matrix update = (m / bc1).array() / ((v / bc2).array().sqrt() + cfg_.eps);
        p -= lr * (update + cfg_.weight_decay * p);
    }
}

void AdamOptimizer::restore(long step, DenoiserParams m, DenoiserParams v) {
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

namespace {

using nlohmann::json;

json encode_matrix(const Matrix &m) {
    // Raw float64 in host order; checkpoints are written and read on little-endian hosts.
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
    std::memcpy(bytes.data(), m.data(), bytes.size());
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", json::binary(std::move(bytes))}};
}

Matrix decode_matrix(const json &j, const std::string &name) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto &bytes = j.at("data").get_binary();
    if (rows < 0 || cols < 0 || bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double)) {
        throw DataError("checkpoint tensor " + name + " has an inconsistent size");
    }
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes.data(), bytes.size());
    return m;
}

json encode_params(const DenoiserParams &p) {
    json out = json::object();
    p.for_each([&](const std::string &name, const Matrix &m) { out[name] = encode_matrix(m); });
    return out;
}

DenoiserParams decode_params(const json &j, const DenoiserParams &layout) {
    DenoiserParams out = layout;
    out.for_each([&](const std::string &name, Matrix &m) {
        if (!j.contains(name)) {
            throw DataError("checkpoint is missing tensor " + name);
        }
        m = decode_matrix(j.at(name), name);
    });
    return out;
}

json dims_to_json(const DenoiserDims &d) {
    return json{{"width", d.width},     {"layers", d.layers},   {"embed", d.embed},
                {"nodes", d.nodes},     {"horizon", d.horizon}, {"context", d.context},
                {"channels", d.channels}, {"period_buckets", d.period_buckets}};
}

DenoiserDims dims_from_json(const json &j) {
    DenoiserDims d;
    d.width = j.at("width").get<int>();
    d.layers = j.at("layers").get<int>();
    d.embed = j.at("embed").get<int>();
    d.nodes = j.at("nodes").get<int>();
    d.horizon = j.at("horizon").get<int>();
    d.context = j.at("context").get<int>();
    d.channels = j.at("channels").get<int>();
    d.period_buckets = j.at("period_buckets").get<int>();
    return d;
}

} // namespace

void save_checkpoint(const std::filesystem::path &path, const Denoiser &model, const AdamOptimizer *optimizer,
                     const std::string &config_hash) {
    json doc;
    doc["format"] = "npdiff-checkpoint";
    doc["version"] = 1;
    doc["dims"] = dims_to_json(model.dims());
    doc["seed"] = model.seed();
    doc["config_hash"] = config_hash;
    doc["params"] = encode_params(model.params());
    if (optimizer != nullptr) {
        doc["optimizer"] = json{{"step", optimizer->steps()},
                                {"m", encode_params(optimizer->first_moment())},
                                {"v", encode_params(optimizer->second_moment())}};
    }
    const std::vector<std::uint8_t> bytes = json::to_cbor(doc);
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw DataError("write failed for " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path &path, const DenoiserDims *expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open checkpoint " + path.string());
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json doc;
    try {
        doc = json::from_cbor(bytes);
    } catch (const json::exception &e) {
        throw DataError("checkpoint " + path.string() + " is not valid CBOR: " + e.what());
    }
    try {
        if (doc.value("format", "") != "npdiff-checkpoint") {
            throw DataError("checkpoint " + path.string() + " has an unknown format tag");
        }
        Checkpoint ck;
        ck.dims = dims_from_json(doc.at("dims"));
        ck.dims.validate();
        if (expected != nullptr && !(ck.dims == *expected)) {
            throw DataError("checkpoint dims do not match the configured model");
        }
        ck.seed = doc.at("seed").get<std::uint64_t>();
        ck.config_hash = doc.at("config_hash").get<std::string>();
        const Denoiser layout(ck.dims, ck.seed);
        ck.params = decode_params(doc.at("params"), layout.params());
        check_shapes(ck.dims, ck.params);
        if (doc.contains("optimizer")) {
            const json &opt = doc.at("optimizer");
            ck.optimizer_step = opt.at("step").get<long>();
            ck.adam_m = decode_params(opt.at("m"), layout.params());
            ck.adam_v = decode_params(opt.at("v"), layout.params());
            check_shapes(ck.dims, *ck.adam_m);
            check_shapes(ck.dims, *ck.adam_v);
        }
        return ck;
    } catch (const json::exception &e) {
        throw DataError("checkpoint " + path.string() + " is missing fields: " + e.what());
    }
}

} // namespace npdiff

#include "sibre/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sibre/errors.hpp"

namespace sibre::model {

namespace {

constexpr double kLogitClamp = 15.0;

double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

const char* mask_distribution_name(MaskDistribution d) {
    switch (d) {
        case MaskDistribution::concrete: return "concrete";
        case MaskDistribution::hard_concrete: return "hard_concrete";
        case MaskDistribution::kuma: return "kuma";
        case MaskDistribution::hard_kuma: return "hard_kuma";
    }
    return "?";
}

MaskDistribution mask_distribution_from_name(const std::string& name) {
    if (name == "concrete") return MaskDistribution::concrete;
    if (name == "hard_concrete") return MaskDistribution::hard_concrete;
    if (name == "kuma") return MaskDistribution::kuma;
    if (name == "hard_kuma") return MaskDistribution::hard_kuma;
    fail(ErrorCode::config, "unknown mask distribution '" + name + "'");
}

void ModelConfig::validate() const {
    if (vocab_size < 2) fail(ErrorCode::config, "vocab_size must cover PAD and UNK");
    if (embed_dim < 1 || hidden_dim < 1) fail(ErrorCode::config, "model dims must be positive");
    if (!regression && num_classes < 2) fail(ErrorCode::config, "num_classes must be >= 2");
}

int budget_k(double pi, int n) {
    if (!(pi > 0.0 && pi < 1.0)) fail(ErrorCode::state, "pi must lie in (0,1)");
    if (n < 1) fail(ErrorCode::state, "budget_k: need at least one unit");
    const int k = static_cast<int>(std::ceil(pi * n - 1e-9));
    return std::clamp(k, 1, n);
}

std::vector<int> infer_mask(const std::vector<double>& probs, double pi) {
    const int n = static_cast<int>(probs.size());
    const int k = budget_k(pi, n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[a] > probs[b]; });
    std::vector<int> mask(n, 0);
    for (int i = 0; i < k; ++i) mask[order[i]] = 1;
    return mask;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const int V = config_.vocab_size, E = config_.embed_dim, H = config_.hidden_dim;
    const int ex_rep = config_.has_query ? 3 * H : 2 * H;
    const int pr_in = config_.has_query ? 2 * H : H;
    const int C = config_.output_dim();

    auto weight = [&](const std::string& name, std::vector<int> shape) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        Rng stream = Rng(seed, "init").split(name);
        for (auto& v : t.data()) v = -0.1 + 0.2 * stream.uniform();
        params_.emplace_back(name, t);
    };
    auto bias = [&](const std::string& name, std::vector<int> shape) {
        params_.emplace_back(name, Tensor::zeros(std::move(shape), true));
    };

    weight("ex.emb", {V, E});
    weight("ex.enc_w1", {3 * E, H});
    bias("ex.enc_b1", {1, H});
    weight("ex.enc_w2", {H, H});
    bias("ex.enc_b2", {1, H});
    weight("ex.head_w", {ex_rep, 1});
    bias("ex.head_b", {1, 1});

    weight("pr.emb", {V, E});
    weight("pr.enc_w1", {3 * E, H});
    bias("pr.enc_b1", {1, H});
    weight("pr.enc_w2", {H, H});
    bias("pr.enc_b2", {1, H});
    weight("pr.head_w1", {pr_in, H});
    bias("pr.head_b1", {1, H});
    weight("pr.head_w2", {H, C});
    bias("pr.head_b2", {1, C});
}

Tensor Model::param(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    fail(ErrorCode::state, "unknown parameter '" + name + "'");
}

Tensor Model::unit_reps(const std::string& prefix, const data::Batch& batch) const {
    const int slots = batch.size * batch.units;
    const Tensor emb = param(prefix + ".emb");
    const Tensor w1 = param(prefix + ".enc_w1"), b1 = param(prefix + ".enc_b1");
    const Tensor w2 = param(prefix + ".enc_w2"), b2 = param(prefix + ".enc_b2");

    Tensor toks = embedding_lookup(emb, batch.token_ids, slots); // [slots, T, E]
    Tensor tok_valid = Tensor::of({slots, batch.unit_len, 1}, batch.token_valid);
    Tensor summed = sum(mul(toks, tok_valid), 1); // [slots, E]
    std::vector<double> inv_counts(slots);
    for (int s = 0; s < slots; ++s) {
        double cnt = 0.0;
        for (int t = 0; t < batch.unit_len; ++t)
            cnt += batch.token_valid[static_cast<std::size_t>(s) * batch.unit_len + t];
        inv_counts[static_cast<std::size_t>(s)] = 1.0 / std::max(1.0, cnt);
    }
    Tensor meanp = mul(summed, Tensor::of({slots, 1}, std::move(inv_counts)));
    Tensor first = embedding_lookup(emb, batch.first_ids);
    Tensor last = embedding_lookup(emb, batch.last_ids);
    Tensor raw = concat({meanp, first, last}); // [slots, 3E]
    Tensor h1 = tanh(add(matmul(raw, w1), b1));
    return tanh(add(matmul(h1, w2), b2)); // [slots, H]
}

Tensor Model::query_rep(const std::string& prefix, const data::Batch& batch) const {
    const Tensor emb = param(prefix + ".emb");
    const Tensor w1 = param(prefix + ".enc_w1"), b1 = param(prefix + ".enc_b1");
    const Tensor w2 = param(prefix + ".enc_w2"), b2 = param(prefix + ".enc_b2");

    Tensor toks = embedding_lookup(emb, batch.query_ids, batch.size); // [B, Tq, E]
    Tensor tok_valid = Tensor::of({batch.size, batch.query_len, 1}, batch.query_valid);
    Tensor summed = sum(mul(toks, tok_valid), 1);
    std::vector<double> inv_counts(batch.size);
    for (int d = 0; d < batch.size; ++d) {
        double cnt = 0.0;
        for (int t = 0; t < batch.query_len; ++t)
            cnt += batch.query_valid[static_cast<std::size_t>(d) * batch.query_len + t];
        inv_counts[static_cast<std::size_t>(d)] = 1.0 / std::max(1.0, cnt);
    }
    Tensor meanp = mul(summed, Tensor::of({batch.size, 1}, std::move(inv_counts)));
    Tensor first = embedding_lookup(emb, batch.query_first);
    Tensor last = embedding_lookup(emb, batch.query_last);
    Tensor raw = concat({meanp, first, last});
    Tensor h1 = tanh(add(matmul(raw, w1), b1));
    return tanh(add(matmul(h1, w2), b2)); // [B, H]
}

Model::Encoded Model::encode(const data::Batch& batch) const {
    if (config_.has_query && !batch.has_query)
        fail(ErrorCode::data, "model expects a query but the batch has none");
    const int slots = batch.size * batch.units;

    Encoded enc;
    Tensor ex_h = unit_reps("ex", batch);

    // Cheap contextualization: concat each unit with its document's mean rep.
    std::vector<double> gather(static_cast<std::size_t>(batch.size) * slots, 0.0);
    std::vector<double> scatter(static_cast<std::size_t>(slots) * batch.size, 0.0);
    for (int d = 0; d < batch.size; ++d)
        for (int u = 0; u < batch.units; ++u) {
            const std::size_t slot = static_cast<std::size_t>(d) * batch.units + u;
            gather[static_cast<std::size_t>(d) * slots + slot] =
                batch.unit_valid[slot] / std::max(1, batch.n_units[d]);
            scatter[slot * batch.size + d] = 1.0;
        }
    Tensor gather_t = Tensor::of({batch.size, slots}, std::move(gather));
    Tensor scatter_t = Tensor::of({slots, batch.size}, std::move(scatter));
    Tensor doc_mean = matmul(gather_t, ex_h);          // [B, H]
    Tensor doc_mean_units = matmul(scatter_t, doc_mean); // [slots, H]

    std::vector<Tensor> parts{ex_h, doc_mean_units};
    if (config_.has_query) {
        enc.ex_query = query_rep("ex", batch);
        enc.pr_query = query_rep("pr", batch);
        parts.push_back(matmul(scatter_t, enc.ex_query));
    }
    enc.ex_units = concat(parts);
    enc.pr_units = unit_reps("pr", batch);
    return enc;
}

Tensor Model::explain(const Encoded& enc) const {
    Tensor logits = add(matmul(enc.ex_units, param("ex.head_w")), param("ex.head_b"));
    return clamp(logits, -kLogitClamp, kLogitClamp);
}

std::vector<double> Model::draw_uniforms(Rng& rng, std::size_t count) {
    std::vector<double> u(count);
    for (auto& v : u) v = rng.uniform();
    return u;
}

Tensor Model::sample_mask(const Tensor& logits, const data::Batch& batch,
                          const MaskSettings& settings, const std::vector<double>& u) const {
    const int slots = batch.size * batch.units;
    if (static_cast<int>(u.size()) != slots)
        fail(ErrorCode::state, "sample_mask: need one uniform draw per unit slot");
    Tensor u_t = Tensor::of({slots, 1}, u);
    Tensor m;
    switch (settings.distribution) {
        case MaskDistribution::concrete:
            m = dist::concrete_sample_t(logits, settings.tau, u_t, settings.noise);
            break;
        case MaskDistribution::hard_concrete:
            m = dist::hard_concrete_sample_t(logits, settings.tau, u_t, settings.stretch,
                                             settings.noise);
            break;
        case MaskDistribution::kuma:
            m = dist::kuma_sample_from_logits_t(logits, u_t);
            break;
        case MaskDistribution::hard_kuma:
            m = dist::hard_kuma_sample_from_logits_t(logits, u_t, settings.stretch);
            break;
    }
    return mul(m, Tensor::of({slots, 1}, batch.unit_valid));
}

std::vector<std::vector<int>> Model::infer_mask_rows(const Tensor& logits, const data::Batch& batch,
                                                     double pi) const {
    const auto& lv = logits.data();
    std::vector<std::vector<int>> rows(batch.size);
    for (int d = 0; d < batch.size; ++d) {
        std::vector<double> probs(batch.n_units[d]);
        for (int u = 0; u < batch.n_units[d]; ++u)
            probs[static_cast<std::size_t>(u)] =
                sigmoid_scalar(lv[static_cast<std::size_t>(d) * batch.units + u]);
        rows[static_cast<std::size_t>(d)] = infer_mask(probs, pi);
    }
    return rows;
}

Tensor Model::infer_masks(const Tensor& logits, const data::Batch& batch, double pi) const {
    const auto rows = infer_mask_rows(logits, batch, pi);
    std::vector<double> flat(static_cast<std::size_t>(batch.size) * batch.units, 0.0);
    for (int d = 0; d < batch.size; ++d)
        for (std::size_t u = 0; u < rows[static_cast<std::size_t>(d)].size(); ++u)
            flat[static_cast<std::size_t>(d) * batch.units + u] = rows[static_cast<std::size_t>(d)][u];
    return Tensor::of({batch.size * batch.units, 1}, std::move(flat));
}

Tensor Model::predict(const Encoded& enc, const Tensor& mask, const data::Batch& batch) const {
    const int slots = batch.size * batch.units;
    if (mask.numel() != slots) fail(ErrorCode::shape, "predict: mask length does not match units");

    Tensor masked = mul(enc.pr_units, mask); // [slots, H]
    std::vector<double> agg_w(static_cast<std::size_t>(batch.size) * slots, 0.0);
    for (int d = 0; d < batch.size; ++d)
        for (int u = 0; u < batch.units; ++u) {
            const std::size_t slot = static_cast<std::size_t>(d) * batch.units + u;
            agg_w[static_cast<std::size_t>(d) * slots + slot] =
                batch.unit_valid[slot] / std::max(1, batch.n_units[d]);
        }
    Tensor agg = matmul(Tensor::of({batch.size, slots}, std::move(agg_w)), masked); // [B, H]

    Tensor head_in = config_.has_query ? concat({agg, enc.pr_query}) : agg;
    Tensor hid = tanh(add(matmul(head_in, param("pr.head_w1")), param("pr.head_b1")));
    Tensor out = add(matmul(hid, param("pr.head_w2")), param("pr.head_b2"));
    return config_.regression ? out : log_softmax(out);
}

std::vector<std::vector<double>> Model::snapshot() const {
    std::vector<std::vector<double>> snap;
    snap.reserve(params_.size());
    for (const auto& [name, t] : params_) snap.push_back(t.data());
    return snap;
}

void Model::restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != params_.size()) fail(ErrorCode::state, "restore: snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) params_[i].second.data() = snap[i];
}

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    out << "tensor " << name << " " << t.rank();
    for (int d : t.shape()) out << " " << d;
    out << "\n";
    char buf[40];
    for (std::size_t i = 0; i < t.data().size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%a", t.data()[i]);
        out << (i ? " " : "") << buf;
    }
    out << "\n";
}

Tensor read_tensor(std::istream& in, std::string& name) {
    std::string tag;
    int rank = 0;
    if (!(in >> tag >> name >> rank) || tag != "tensor" || rank < 1 || rank > 3)
        fail(ErrorCode::data, "checkpoint: malformed tensor header");
    std::vector<int> shape(static_cast<std::size_t>(rank));
    for (auto& d : shape)
        if (!(in >> d)) fail(ErrorCode::data, "checkpoint: malformed tensor shape");
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) {
        std::string tok;
        if (!(in >> tok)) fail(ErrorCode::data, "checkpoint: truncated tensor data");
        v = std::strtod(tok.c_str(), nullptr);
    }
    return Tensor::of(std::move(shape), std::move(values));
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const std::map<std::string, Tensor>& extras) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write checkpoint " + path);
    const auto& c = model.config();
    out << "sibre_checkpoint_v1\n";
    out << "vocab_size " << c.vocab_size << "\n";
    out << "embed_dim " << c.embed_dim << "\n";
    out << "hidden_dim " << c.hidden_dim << "\n";
    out << "granularity " << data::granularity_name(c.granularity) << "\n";
    out << "num_classes " << c.num_classes << "\n";
    out << "regression " << (c.regression ? 1 : 0) << "\n";
    out << "has_query " << (c.has_query ? 1 : 0) << "\n";
    out << "params " << model.parameters().size() + extras.size() << "\n";
    for (const auto& [name, t] : model.parameters()) write_tensor(out, name, t);
    for (const auto& [name, t] : extras) write_tensor(out, name, t);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read checkpoint " + path);
    std::string magic;
    if (!(in >> magic) || magic != "sibre_checkpoint_v1")
        fail(ErrorCode::data, "not a sibre checkpoint: " + path);

    ModelConfig cfg;
    std::string key;
    std::size_t n_params = 0;
    while (in >> key) {
        if (key == "params") {
            in >> n_params;
            break;
        }
        std::string value;
        if (!(in >> value)) fail(ErrorCode::data, "checkpoint: missing value for " + key);
        if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
        else if (key == "embed_dim") cfg.embed_dim = std::stoi(value);
        else if (key == "hidden_dim") cfg.hidden_dim = std::stoi(value);
        else if (key == "granularity") cfg.granularity = data::granularity_from_name(value);
        else if (key == "num_classes") cfg.num_classes = std::stoi(value);
        else if (key == "regression") cfg.regression = value == "1";
        else if (key == "has_query") cfg.has_query = value == "1";
        else fail(ErrorCode::data, "checkpoint: unknown config key " + key);
    }

    Checkpoint ckpt{Model(cfg, 0), {}};
    std::map<std::string, Tensor> loaded;
    for (std::size_t i = 0; i < n_params; ++i) {
        std::string name;
        Tensor t = read_tensor(in, name);
        loaded.emplace(name, t);
    }
    for (auto& [name, t] : ckpt.model.parameters()) {
        auto it = loaded.find(name);
        if (it == loaded.end()) fail(ErrorCode::data, "checkpoint: missing parameter " + name);
        if (it->second.shape() != t.shape())
            fail(ErrorCode::data, "checkpoint: shape mismatch for " + name);
        t.data() = it->second.data();
        loaded.erase(it);
    }
    ckpt.extras = std::move(loaded);
    return ckpt;
}

} // namespace sibre::model

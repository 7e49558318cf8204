#include "sparsemask/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "sparsemask/sparse_loss.hpp"

namespace fs = std::filesystem;

namespace sparsemask {

namespace {

// Batch assembly; images shifted to zero-centered input range.
void fill_batch(Tensor<float>& images, LabelMap& labels, const std::vector<Sample>& samples,
                const std::vector<int>& indices, std::size_t offset, int count) {
    const std::size_t img_len = samples[0].image.numel();
    const std::size_t lab_len = samples[0].labels.numel();
    for (int b = 0; b < count; ++b) {
        const Sample& s = samples[indices[offset + b]];
        for (std::size_t i = 0; i < img_len; ++i) {
            images.data[b * img_len + i] = s.image.data[i] - 0.5f;
        }
        std::copy(s.labels.ids.begin(), s.labels.ids.end(),
                  labels.ids.begin() + b * lab_len);
    }
}

void fill_batch_generated(Tensor<float>& images, LabelMap& labels,
                          const SyntheticTaskSpec& spec, const std::vector<int>& indices,
                          std::size_t offset, int count, std::uint64_t aug_seed, int epoch) {
    const std::size_t img_len = static_cast<std::size_t>(3) * spec.image_size * spec.image_size;
    const std::size_t lab_len =
        static_cast<std::size_t>(spec.image_size) * spec.image_size;
    for (int b = 0; b < count; ++b) {
        const int idx = indices[offset + b];
        const Sample s = generate(spec, idx, sample_augmentation(aug_seed, epoch, idx));
        for (std::size_t i = 0; i < img_len; ++i) {
            images.data[b * img_len + i] = s.image.data[i] - 0.5f;
        }
        std::copy(s.labels.ids.begin(), s.labels.ids.end(), labels.ids.begin() + b * lab_len);
    }
}

std::vector<int> epoch_permutation(int count, std::uint64_t seed, int epoch) {
    std::vector<int> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch), 0x5f1e));
    for (int i = count - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace

std::vector<Sample> materialize_val(const SyntheticTaskSpec& spec, const std::string& cache_dir) {
    std::vector<Sample> val;
    if (!cache_dir.empty()) {
        fs::create_directories(cache_dir);
        char name[64];
        for (int i = 0; i < spec.num_val; ++i) {
            const int idx = spec.num_train + i;
            std::snprintf(name, sizeof(name), "val_%04d.smds", i);
            const std::string path = (fs::path(cache_dir) / name).string();
            if (!fs::exists(path)) write_sample_cache(path, generate(spec, idx), spec.num_classes);
            val.push_back(read_sample_cache(path));
        }
    } else {
        for (int i = 0; i < spec.num_val; ++i) val.push_back(generate(spec, spec.num_train + i));
    }
    return val;
}

EvalResult evaluate_forward(const std::function<Tensor<float>(const Tensor<float>&)>& forward,
                            const std::vector<Sample>& val, const SyntheticTaskSpec& spec,
                            int batch) {
    const int S = spec.image_size;
    ConfusionCounts confusion(spec.num_classes);
    FBetaCounts fbeta;
    MaeCounts maec;
    const bool binary = spec.kind != TaskKind::multi_class_shapes;

    std::vector<int> idx(val.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t done = 0;
    while (done < val.size()) {
        const int count = static_cast<int>(std::min<std::size_t>(batch, val.size() - done));
        Tensor<float> images(count, 3, S, S);
        LabelMap labels(count, S, S);
        fill_batch(images, labels, val, idx, done, count);
        Tensor<float> logits = forward(images);
        confusion.add(argmax_labels(logits), labels, kIgnoreLabel);
        if (binary) {
            const Tensor<float> prob = softmax_prob_of_class(logits, 1);
            fbeta.add(prob, labels);
            maec.add(prob, labels);
        }
        done += count;
    }
    EvalResult r;
    r.miou = confusion.miou();
    r.pixel_acc = confusion.pixel_acc();
    if (binary) {
        r.mae = maec.value();
        r.f_beta = fbeta.value();
    }
    return r;
}

MetricsCsv::MetricsCsv(const std::string& path, const std::string& digest)
    : out_(std::make_shared<std::ofstream>(path)) {
    if (!out_->good()) throw std::runtime_error("metrics csv: cannot open '" + path + "'");
    *out_ << "# config_digest=" << digest << "\n";
    *out_ << "epoch,split,metric,value\n";
}

void MetricsCsv::row(int epoch, const std::string& split, const std::string& metric,
                     double value) {
    if (!out_) return;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    *out_ << epoch << "," << split << "," << metric << "," << buf << "\n";
    out_->flush();
}

SparsitySummary summarize_gates(const GateMatrix& gm, double sigma, int kept_edges) {
    SparsitySummary s;
    s.total_gates = static_cast<int>(gm.entries.size());
    s.kept_edges = kept_edges;
    double min_kept = 2.0, max_dropped = 0.0;
    for (const auto& e : gm.entries) {
        if (e.value <= 0.1 || e.value >= 0.9) ++s.near_binary;
        if (e.value < sigma) {
            ++s.below_sigma;
            max_dropped = std::max(max_dropped, e.value);
        } else {
            min_kept = std::min(min_kept, e.value);
        }
    }
    if (s.below_sigma > 0 && s.below_sigma < s.total_gates && max_dropped > 0.0) {
        s.separation = min_kept / max_dropped;
    }
    return s;
}

// ---------------------------------------------------------------------------
// SearchSession
// ---------------------------------------------------------------------------

SearchSession::SearchSession(const Config& cfg)
    : cfg_(cfg), digest_(config_digest(cfg)),
      fdn_(Fdn::build(cfg.encoder, cfg.decoder_channels, cfg.fdn_options(),
                      static_cast<std::uint64_t>(cfg.search.seed))) {
    cfg_.validate();
    val_ = materialize_val(cfg_.task, cfg_.cache_dir);
    steps_per_epoch_ = std::max(1, cfg_.task.num_train / cfg_.search.batch);
    const long total = static_cast<long>(steps_per_epoch_) * cfg_.search.epochs;
    std::vector<ParamGroup> groups;
    groups.push_back({"encoder", fdn_.encoder_params(), cfg_.search.lr_encoder, 4e-5});
    groups.push_back({"decoder", fdn_.decoder_params(), cfg_.search.lr_decoder, 4e-5});
    groups.push_back({"gates", fdn_.gate_params(), cfg_.search.lr_gates, 0.0});
    opt_ = std::make_unique<SgdOptimizer>(std::move(groups), 0.9, 0.9, total);
}

double SearchSession::run_epoch() {
    const int S = cfg_.task.image_size;
    const int B = cfg_.search.batch;
    SparseLossConfig loss_cfg;
    loss_cfg.lambda = cfg_.search.lambda;
    loss_cfg.alpha_override = cfg_.alpha_override;

    std::vector<int> perm =
        epoch_permutation(cfg_.task.num_train, static_cast<std::uint64_t>(cfg_.search.seed),
                          epoch_);
    double loss_sum = 0.0;
    Tensor<float> images(B, 3, S, S);
    LabelMap labels(B, S, S);
    for (int step = 0; step < steps_per_epoch_; ++step) {
        fill_batch_generated(images, labels, cfg_.task, perm,
                             static_cast<std::size_t>(step) * B, B,
                             static_cast<std::uint64_t>(cfg_.search.seed), epoch_);
        VarF logits = fdn_.forward(images, true);
        VarF task = ad::softmax_cross_entropy(logits, labels, kIgnoreLabel);
        VarF loss;
        if (cfg_.regularizer == Regularizer::sparse) {
            loss = total_loss(task, fdn_.gate_vectors(), loss_cfg);
        } else {
            loss = total_loss_l1(task, fdn_.gate_vectors(), cfg_.search.lambda);
        }
        const double loss_v = static_cast<double>(loss.value().data[0]);
        if (!std::isfinite(loss_v)) {
            throw std::runtime_error("search: non-finite loss at epoch " +
                                     std::to_string(epoch_) + " step " + std::to_string(step));
        }
        loss_sum += loss_v;
        opt_->zero_grad();
        ad::backward(loss);
        opt_->step();
    }
    ++epoch_;
    return loss_sum / steps_per_epoch_;
}

EvalResult SearchSession::evaluate() {
    auto fwd = [this](const Tensor<float>& images) {
        return fdn_.forward(images, false).value();
    };
    return evaluate_forward(fwd, val_, cfg_.task, cfg_.search.batch);
}

SearchOutputs run_search(const Config& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string digest = config_digest(cfg);
    SearchSession session(cfg);

    MetricsCsv metrics((fs::path(out_dir) / "metrics.csv").string(), digest);
    for (int e = 0; e < cfg.search.epochs; ++e) {
        const double loss = session.run_epoch();
        metrics.row(e, "train", "loss", loss);
        const EvalResult r = session.evaluate();
        metrics.row(e, "val", "miou", r.miou);
        metrics.row(e, "val", "pixel_acc", r.pixel_acc);
        if (r.mae >= 0.0) {
            metrics.row(e, "val", "mae", r.mae);
            metrics.row(e, "val", "f_beta", r.f_beta);
        }
    }

    SearchOutputs out;
    out.gates = session.fdn().read_gates();
    out.gates_csv = (fs::path(out_dir) / "gates.csv").string();
    write_gate_csv(out.gates, out.gates_csv, digest);

    PruneContext ctx{cfg.encoder, cfg.decoder_channels, cfg.search.seed, digest};
    out.arch = prune(out.gates, cfg.search.sigma, ctx);
    out.arch_json = (fs::path(out_dir) / "architecture.json").string();
    export_architecture(out.arch, out.arch_json);

    PrunedArchitecture full = full_architecture(cfg.encoder.num_stages(), ctx);
    out.full_json = (fs::path(out_dir) / "fdn_full.json").string();
    export_architecture(full, out.full_json);

    out.summary = summarize_gates(out.gates, cfg.search.sigma, out.arch.edge_count());
    out.final_val_miou = session.evaluate().miou;
    out.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
    return out;
}

// ---------------------------------------------------------------------------
// TrainSession
// ---------------------------------------------------------------------------

TrainSession::TrainSession(const Config& cfg, const PrunedArchitecture& arch)
    : cfg_(cfg), digest_(config_digest(cfg)), arch_(arch),
      net_(PrunedNet::instantiate(arch, cfg.fdn_options(),
                                  static_cast<std::uint64_t>(cfg.search.seed))) {
    cfg_.validate();
    val_ = materialize_val(cfg_.task, cfg_.cache_dir);
    steps_per_epoch_ = std::max(1, cfg_.task.num_train / cfg_.search.batch);
    const int epochs = std::max(1, cfg_.search.retrain_epochs);
    const long total = static_cast<long>(steps_per_epoch_) * epochs;
    std::vector<ParamGroup> groups;
    groups.push_back({"encoder", net_.encoder_params(), cfg_.search.lr_encoder, 4e-5});
    groups.push_back({"decoder", net_.decoder_params(), cfg_.search.lr_decoder, 4e-5});
    opt_ = std::make_unique<SgdOptimizer>(std::move(groups), 0.9, 0.9, total);
}

double TrainSession::run_epoch() {
    const int S = cfg_.task.image_size;
    const int B = cfg_.search.batch;
    std::vector<int> perm =
        epoch_permutation(cfg_.task.num_train,
                          static_cast<std::uint64_t>(cfg_.search.seed) + 1, epoch_);
    double loss_sum = 0.0;
    Tensor<float> images(B, 3, S, S);
    LabelMap labels(B, S, S);
    for (int step = 0; step < steps_per_epoch_; ++step) {
        fill_batch_generated(images, labels, cfg_.task, perm,
                             static_cast<std::size_t>(step) * B, B,
                             static_cast<std::uint64_t>(cfg_.search.seed) + 1, epoch_);
        VarF logits = net_.forward(images, true);
        VarF loss = ad::softmax_cross_entropy(logits, labels, kIgnoreLabel);
        const double loss_v = static_cast<double>(loss.value().data[0]);
        if (!std::isfinite(loss_v)) {
            throw std::runtime_error("train: non-finite loss at epoch " +
                                     std::to_string(epoch_) + " step " + std::to_string(step));
        }
        loss_sum += loss_v;
        opt_->zero_grad();
        ad::backward(loss);
        opt_->step();
    }
    ++epoch_;
    return loss_sum / steps_per_epoch_;
}

EvalResult TrainSession::evaluate() {
    auto fwd = [this](const Tensor<float>& images) {
        return net_.forward(images, false).value();
    };
    return evaluate_forward(fwd, val_, cfg_.task, cfg_.search.batch);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in) {
    const std::uint32_t len = get_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

void put_floats(std::ofstream& out, const float* data, std::size_t count) {
    put_u32(out, static_cast<std::uint32_t>(count));
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

void get_floats(std::ifstream& in, float* data, std::size_t expect, const std::string& what) {
    const std::uint32_t count = get_u32(in);
    if (count != expect) {
        throw std::runtime_error("checkpoint: size mismatch for " + what + ", file has " +
                                 std::to_string(count) + ", model needs " +
                                 std::to_string(expect));
    }
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
}

}  // namespace

void TrainSession::save_checkpoint(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    out.write("SMCK", 4);
    put_u32(out, 1);  // version
    put_string(out, digest_);
    put_u32(out, static_cast<std::uint32_t>(epoch_));
    put_u32(out, static_cast<std::uint32_t>(opt_->current_step()));

    auto params = net_.named_params();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, v] : params) {
        put_string(out, name);
        put_floats(out, v.value().data.data(), v.value().numel());
    }
    auto buffers = net_.named_buffers();
    put_u32(out, static_cast<std::uint32_t>(buffers.size()));
    for (auto& [name, vec] : buffers) {
        put_string(out, name);
        put_floats(out, vec->data(), vec->size());
    }
    auto& vel = opt_->velocity();
    put_u32(out, static_cast<std::uint32_t>(vel.size()));
    for (auto& group : vel) {
        put_u32(out, static_cast<std::uint32_t>(group.size()));
        for (auto& v : group) put_floats(out, v.data(), v.size());
    }
    if (!out.good()) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

void TrainSession::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (std::string(magic, 4) != "SMCK") throw std::runtime_error("checkpoint: bad magic");
    if (get_u32(in) != 1) throw std::runtime_error("checkpoint: unsupported version");
    get_string(in);  // digest of the producing run; informational
    epoch_ = static_cast<int>(get_u32(in));
    const long step = static_cast<long>(get_u32(in));

    auto params = net_.named_params();
    const std::uint32_t param_count = get_u32(in);
    if (param_count != params.size()) {
        throw std::runtime_error("checkpoint: parameter count mismatch");
    }
    for (auto& [name, v] : params) {
        const std::string fname = get_string(in);
        if (fname != name) {
            throw std::runtime_error("checkpoint: parameter order mismatch, file has '" + fname +
                                     "', model expects '" + name + "'");
        }
        get_floats(in, v.value().data.data(), v.value().numel(), name);
    }
    auto buffers = net_.named_buffers();
    const std::uint32_t buffer_count = get_u32(in);
    if (buffer_count != buffers.size()) throw std::runtime_error("checkpoint: buffer mismatch");
    for (auto& [name, vec] : buffers) {
        const std::string fname = get_string(in);
        if (fname != name) throw std::runtime_error("checkpoint: buffer order mismatch");
        get_floats(in, vec->data(), vec->size(), name);
    }
    auto& vel = opt_->velocity();
    const std::uint32_t group_count = get_u32(in);
    if (group_count != vel.size()) throw std::runtime_error("checkpoint: group mismatch");
    for (auto& group : vel) {
        const std::uint32_t pc = get_u32(in);
        if (pc != group.size()) throw std::runtime_error("checkpoint: velocity mismatch");
        for (auto& v : group) get_floats(in, v.data(), v.size(), "velocity");
    }
    opt_->set_step(step);
    if (!in.good()) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
}

TrainOutputs run_train(const Config& cfg, const PrunedArchitecture& arch,
                       const std::string& out_dir, int epochs_override,
                       const std::string& resume_path) {
    fs::create_directories(out_dir);
    Config effective = cfg;
    if (epochs_override > 0) effective.search.retrain_epochs = epochs_override;
    const std::string digest = config_digest(effective);

    TrainSession session(effective, arch);
    if (!resume_path.empty()) session.load_checkpoint(resume_path);

    TrainOutputs out;
    out.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
    MetricsCsv metrics(out.metrics_csv, digest);
    metrics.row(0, "model", "param_count", static_cast<double>(session.param_count()));
    const int epochs = std::max(1, effective.search.retrain_epochs);
    while (session.epoch() < epochs) {
        const double loss = session.run_epoch();
        out.epoch_losses.push_back(loss);
        metrics.row(session.epoch() - 1, "train", "loss", loss);
        const EvalResult r = session.evaluate();
        out.final_val_miou = r.miou;
        metrics.row(session.epoch() - 1, "val", "miou", r.miou);
        metrics.row(session.epoch() - 1, "val", "pixel_acc", r.pixel_acc);
        if (r.mae >= 0.0) {
            metrics.row(session.epoch() - 1, "val", "mae", r.mae);
            metrics.row(session.epoch() - 1, "val", "f_beta", r.f_beta);
        }
    }
    out.param_count = session.param_count();
    out.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
    session.save_checkpoint(out.checkpoint_path);
    return out;
}

EvalResult run_eval(const Config& cfg, const PrunedArchitecture& arch,
                    const std::string& checkpoint_path) {
    TrainSession session(cfg, arch);
    if (!checkpoint_path.empty()) session.load_checkpoint(checkpoint_path);
    return session.evaluate();
}

}  // namespace sparsemask

#include "cloudmatch/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cloudmatch/errors.hpp"
#include "cloudmatch/rng.hpp"

namespace fs = std::filesystem;

namespace cloudmatch {

namespace {

// Domain-separation tags for derived RNG streams.
constexpr std::uint64_t kStreamShuffle = 0x53485546ull;  // epoch shuffles
constexpr std::uint64_t kStreamLabeled = 0x4c414245ull;  // labeled-branch views
constexpr std::uint64_t kStreamBundle = 0x42554e44ull;   // unlabeled view bundles

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (...) {
        throw InputError("config: bad numeric value for " + key + ": '" + value + "'");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (...) {
        throw InputError("config: bad integer value for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InputError("config: bad boolean value for " + key + ": '" + value + "'");
}

} // namespace

TrainConfig TrainConfig::resolved() const {
    TrainConfig out = *this;
    if (out.no_vc) out.weights.lambda_vc = 0.0;
    if (out.no_inter_mix) out.aug.inter_mix_prob = 0.0;
    if (out.no_intra_mix) out.aug.intra_mix_prob = 0.0;
    return out;
}

void TrainConfig::validate() const {
    if (labeled_ratio != "1/4" && labeled_ratio != "1/8" && labeled_ratio != "1/16")
        throw InputError("config: labeled-ratio must be 1/4, 1/8 or 1/16, got '" + labeled_ratio +
                         "'");
    if (epochs < 1) throw ContractError("config: epochs must be >= 1");
    if (batch_size < 1) throw ContractError("config: batch-size must be >= 1");
    if (lr <= 0.0) throw ContractError("config: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("config: momentum outside [0,1)");
    if (w2s_conf_source != "weak" && w2s_conf_source != "strong")
        throw InputError("config: w2s-conf-source must be weak or strong");
    if (weights.lambda_w2s < 0.0 || weights.lambda_vc < 0.0)
        throw ContractError("config: loss weights must be non-negative");
    if (aug.patch_size < 8) throw ContractError("config: patch-size must be >= 8");
}

void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "data") cfg.data_dir = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "labeled-ratio") cfg.labeled_ratio = value;
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch-size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "momentum") cfg.momentum = parse_double(key, value);
    else if (key == "lambda-w2s") cfg.weights.lambda_w2s = parse_double(key, value);
    else if (key == "lambda-vc") cfg.weights.lambda_vc = parse_double(key, value);
    else if (key == "patch-size") cfg.aug.patch_size = static_cast<int>(parse_int(key, value));
    else if (key == "scale-min") cfg.aug.scale_min = parse_double(key, value);
    else if (key == "scale-max") cfg.aug.scale_max = parse_double(key, value);
    else if (key == "flip-prob") cfg.aug.flip_prob = parse_double(key, value);
    else if (key == "jitter-prob") cfg.aug.jitter_prob = parse_double(key, value);
    else if (key == "jitter-intensity") cfg.aug.jitter_intensity = parse_double(key, value);
    else if (key == "gray-prob") cfg.aug.gray_prob = parse_double(key, value);
    else if (key == "blur-prob") cfg.aug.blur_prob = parse_double(key, value);
    else if (key == "blur-sigma-min") cfg.aug.blur_sigma_min = parse_double(key, value);
    else if (key == "blur-sigma-max") cfg.aug.blur_sigma_max = parse_double(key, value);
    else if (key == "rect-area-min") cfg.aug.rect_area_min = parse_double(key, value);
    else if (key == "rect-area-max") cfg.aug.rect_area_max = parse_double(key, value);
    else if (key == "rect-aspect-min") cfg.aug.rect_aspect_min = parse_double(key, value);
    else if (key == "rect-aspect-max") cfg.aug.rect_aspect_max = parse_double(key, value);
    else if (key == "intra-mix-prob") cfg.aug.intra_mix_prob = parse_double(key, value);
    else if (key == "inter-mix-prob") cfg.aug.inter_mix_prob = parse_double(key, value);
    else if (key == "thresh-momentum") cfg.thresh_momentum = parse_double(key, value);
    else if (key == "thresh-floor") cfg.thresh_floor = parse_double(key, value);
    else if (key == "no-vc") cfg.no_vc = parse_bool(key, value);
    else if (key == "no-inter-mix") cfg.no_inter_mix = parse_bool(key, value);
    else if (key == "no-intra-mix") cfg.no_intra_mix = parse_bool(key, value);
    else if (key == "supervised-only") cfg.supervised_only = parse_bool(key, value);
    else if (key == "w2s-conf-source") cfg.w2s_conf_source = value;
    else throw InputError("config: unknown key '" + key + "'");
}

void apply_config_file(TrainConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed = line;
        trimmed.erase(0, trimmed.find_first_not_of(" \t"));
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw InputError("config: missing '=' at " + path + ":" + std::to_string(lineno));
        const auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            const auto last = s.find_last_not_of(" \t");
            s.erase(last == std::string::npos ? 0 : last + 1);
            return s;
        };
        apply_config_kv(cfg, trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
}

std::string config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "data=" << cfg.data_dir << "\n";
    out << "out=" << cfg.out_dir << "\n";
    out << "labeled-ratio=" << cfg.labeled_ratio << "\n";
    out << "seed=" << cfg.seed << "\n";
    out << "epochs=" << cfg.epochs << "\n";
    out << "batch-size=" << cfg.batch_size << "\n";
    out << "lr=" << cfg.lr << "\n";
    out << "momentum=" << cfg.momentum << "\n";
    out << "lambda-w2s=" << cfg.weights.lambda_w2s << "\n";
    out << "lambda-vc=" << cfg.weights.lambda_vc << "\n";
    out << "patch-size=" << cfg.aug.patch_size << "\n";
    out << "scale-min=" << cfg.aug.scale_min << "\n";
    out << "scale-max=" << cfg.aug.scale_max << "\n";
    out << "flip-prob=" << cfg.aug.flip_prob << "\n";
    out << "jitter-prob=" << cfg.aug.jitter_prob << "\n";
    out << "jitter-intensity=" << cfg.aug.jitter_intensity << "\n";
    out << "gray-prob=" << cfg.aug.gray_prob << "\n";
    out << "blur-prob=" << cfg.aug.blur_prob << "\n";
    out << "blur-sigma-min=" << cfg.aug.blur_sigma_min << "\n";
    out << "blur-sigma-max=" << cfg.aug.blur_sigma_max << "\n";
    out << "rect-area-min=" << cfg.aug.rect_area_min << "\n";
    out << "rect-area-max=" << cfg.aug.rect_area_max << "\n";
    out << "rect-aspect-min=" << cfg.aug.rect_aspect_min << "\n";
    out << "rect-aspect-max=" << cfg.aug.rect_aspect_max << "\n";
    out << "intra-mix-prob=" << cfg.aug.intra_mix_prob << "\n";
    out << "inter-mix-prob=" << cfg.aug.inter_mix_prob << "\n";
    out << "thresh-momentum=" << cfg.thresh_momentum << "\n";
    out << "thresh-floor=" << cfg.thresh_floor << "\n";
    out << "no-vc=" << (cfg.no_vc ? "true" : "false") << "\n";
    out << "no-inter-mix=" << (cfg.no_inter_mix ? "true" : "false") << "\n";
    out << "no-intra-mix=" << (cfg.no_intra_mix ? "true" : "false") << "\n";
    out << "supervised-only=" << (cfg.supervised_only ? "true" : "false") << "\n";
    out << "w2s-conf-source=" << cfg.w2s_conf_source << "\n";
    return out.str();
}

void sgd_update(std::span<double> param, std::span<const double> grad,
                std::span<double> velocity, double lr, double momentum) {
    if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size()))
        throw DimensionError("sgd_update: buffer sizes differ");
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

namespace {

constexpr char kCheckpointMagic[] = "cloudmatch-ckpt v1\n";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw InputError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == buf.size(); }
};

enum SectionType : unsigned char { kF64 = 0, kU64 = 1, kBytes = 2 };

void put_section_f64(std::string& out, const std::string& name, const std::vector<double>& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kF64));
    put_u64(out, data.size());
    for (double v : data) put_f64(out, v);
}

void put_section_u64(std::string& out, const std::string& name,
                     const std::vector<std::uint64_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kU64));
    put_u64(out, data.size());
    for (std::uint64_t v : data) put_u64(out, v);
}

void put_section_bytes(std::string& out, const std::string& name, const std::string& data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kBytes));
    put_u64(out, data.size());
    out += data;
}

} // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out = kCheckpointMagic;
    for (const auto& [name, data] : ckpt.params) put_section_f64(out, "param/" + name, data);
    for (const auto& [name, data] : ckpt.velocities)
        put_section_f64(out, "velocity/" + name, data);
    put_section_f64(out, "threshold", {ckpt.thresh_ema, ckpt.thresh_tau});
    put_section_u64(out, "counters", {ckpt.master_seed, ckpt.epoch, ckpt.step_in_epoch});
    put_section_bytes(out, "config", ckpt.config_text);

    if (!fs::path(path).parent_path().empty())
        fs::create_directories(fs::path(path).parent_path());
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw InputError("write_checkpoint: cannot open " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw InputError("write_checkpoint: write failed on " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw InputError("read_checkpoint: cannot open " + path);
    std::stringstream ss;
    ss << file.rdbuf();
    const std::string buf = ss.str();

    const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
    if (buf.size() < magic_len || buf.compare(0, magic_len, kCheckpointMagic) != 0)
        throw InputError("read_checkpoint: " + path + " is not a v1 checkpoint");

    Checkpoint ckpt;
    Reader r{buf, magic_len};
    while (!r.done()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        r.need(1);
        const auto type = static_cast<SectionType>(static_cast<unsigned char>(buf[r.pos++]));
        const std::uint64_t count = r.u64();
        if (type == kF64) {
            std::vector<double> data(count);
            for (double& v : data) v = r.f64();
            if (name.starts_with("param/"))
                ckpt.params.emplace_back(name.substr(6), std::move(data));
            else if (name.starts_with("velocity/"))
                ckpt.velocities.emplace_back(name.substr(9), std::move(data));
            else if (name == "threshold" && data.size() == 2) {
                ckpt.thresh_ema = data[0];
                ckpt.thresh_tau = data[1];
            } else
                throw InputError("read_checkpoint: unexpected f64 section '" + name + "'");
        } else if (type == kU64) {
            std::vector<std::uint64_t> data(count);
            for (std::uint64_t& v : data) v = r.u64();
            if (name == "counters" && data.size() == 3) {
                ckpt.master_seed = data[0];
                ckpt.epoch = data[1];
                ckpt.step_in_epoch = data[2];
            } else
                throw InputError("read_checkpoint: unexpected u64 section '" + name + "'");
        } else if (type == kBytes) {
            const std::string data = r.bytes(count);
            if (name == "config")
                ckpt.config_text = data;
            else
                throw InputError("read_checkpoint: unexpected byte section '" + name + "'");
        } else {
            throw InputError("read_checkpoint: unknown section type in " + path);
        }
    }
    return ckpt;
}

void load_parameters(SegmentationModel& model, const Checkpoint& ckpt) {
    auto& params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw InputError("load_parameters: checkpoint has " + std::to_string(ckpt.params.size()) +
                         " tensors, model " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, data] = ckpt.params[i];
        if (params[i].name != name)
            throw InputError("load_parameters: tensor name mismatch: model '" + params[i].name +
                             "' vs checkpoint '" + name + "'");
        auto dst = params[i].tensor.mutable_values();
        if (dst.size() != data.size())
            throw InputError("load_parameters: size mismatch for " + name);
        std::copy(data.begin(), data.end(), dst.begin());
    }
}

Trainer::Trainer(SegmentationModel& model, const Dataset& dataset, const TrainConfig& cfg)
    : model_(model), data_(dataset), cfg_(cfg.resolved()) {
    cfg_.validate();
    if (data_.manifest.labeled_ids.empty())
        throw ContractError("Trainer: dataset has no labeled samples");
    thresh_.momentum = cfg_.thresh_momentum;
    thresh_.floor = cfg_.thresh_floor;
    thresh_.ema = cfg_.thresh_floor;
    thresh_.tau = cfg_.thresh_floor;
    for (ParamEntry& p : model_.parameters())
        velocities_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
}

Trainer::EpochPlan Trainer::plan_epoch(std::uint64_t epoch) const {
    EpochPlan plan;
    Rng rng(Rng::mix({cfg_.seed, kStreamShuffle, epoch}));

    std::vector<const Sample*> labeled;
    for (const std::string& id : data_.manifest.labeled_ids) labeled.push_back(&data_.at(id));
    for (std::size_t i = labeled.size() - 1; i > 0; --i)
        std::swap(labeled[i], labeled[rng.uniform_int(i + 1)]);
    plan.labeled_order = std::move(labeled);

    std::vector<const Sample*> unlabeled;
    for (const std::string& id : data_.manifest.unlabeled_ids) unlabeled.push_back(&data_.at(id));
    if (unlabeled.size() > 1)
        for (std::size_t i = unlabeled.size() - 1; i > 0; --i)
            std::swap(unlabeled[i], unlabeled[rng.uniform_int(i + 1)]);
    for (std::size_t i = 0; i + 1 < unlabeled.size(); i += 2)
        plan.pairs.emplace_back(unlabeled[i], unlabeled[i + 1]);

    // The unlabeled pass paces the epoch; the supervised-only baseline keeps
    // the same step count so runs are comparable update-for-update. Datasets
    // with no unlabeled pool fall back to labeled pacing.
    plan.steps = static_cast<int>(plan.pairs.size()) / cfg_.batch_size;
    if (plan.steps == 0)
        plan.steps = std::max<int>(
            1, static_cast<int>(plan.labeled_order.size()) / cfg_.batch_size);
    return plan;
}

int Trainer::steps_per_epoch() const { return plan_epoch(epoch_).steps; }

StepLosses Trainer::train_step(const std::vector<const Sample*>& labeled,
                               const std::vector<std::pair<const Sample*, const Sample*>>& pairs,
                               std::uint64_t epoch, std::uint64_t step) {
    if (labeled.empty()) throw ContractError("train_step: empty labeled batch");

    StepLosses out;
    Tensor l_sup = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        const Sample& sample = *labeled[i];
        if (!sample.mask) throw ContractError("train_step: labeled sample " + sample.id +
                                              " has no mask");
        Rng rng(Rng::mix({cfg_.seed, kStreamLabeled, epoch, step, i}));
        WeakView view = weak_augment(sample.image, rng, cfg_.aug);
        Image mask_view = replay_weak(*sample.mask, view.geom, cfg_.aug.patch_size, true);

        Tensor x = to_tensor(apply_norm(view.view, data_.stats));
        Tensor probs = softmax_channels(model_.forward(x));

        const std::int64_t hw = static_cast<std::int64_t>(mask_view.height) * mask_view.width;
        std::vector<double> onehot(2 * hw);
        for (std::int64_t j = 0; j < hw; ++j) {
            onehot[j] = 1.0 - mask_view.data[j];
            onehot[hw + j] = mask_view.data[j];
        }
        Tensor target = Tensor::from_data({2, mask_view.height, mask_view.width},
                                          std::move(onehot));
        l_sup = l_sup + supervised_loss(probs, target);
    }
    l_sup = l_sup / static_cast<double>(labeled.size());

    Tensor l_w2s_aa = Tensor::scalar(0.0);
    Tensor l_w2s_ab = Tensor::scalar(0.0);
    Tensor l_vc_aa = Tensor::scalar(0.0);
    Tensor l_vc_ab = Tensor::scalar(0.0);

    if (!cfg_.supervised_only && !pairs.empty()) {
        struct PairState {
            ViewBundle bundle;
            Tensor z_aa_w, z_ab_w;
            Tensor y_aa_w, y_ab_w;
        };
        std::vector<PairState> states;
        states.reserve(pairs.size());
        std::vector<double> confidences;

        for (std::size_t p = 0; p < pairs.size(); ++p) {
            PairState st;
            st.bundle = make_views(pairs[p].first->image, pairs[p].second->image,
                                   Rng::mix({cfg_.seed, kStreamBundle, epoch, step, p}), cfg_.aug);
            const Tensor z_w1a =
                model_.forward(to_tensor(apply_norm(st.bundle.w1a.view, data_.stats))).detach();
            const Tensor z_w2a =
                model_.forward(to_tensor(apply_norm(st.bundle.w2a.view, data_.stats))).detach();
            const Tensor z_wb =
                model_.forward(to_tensor(apply_norm(st.bundle.wb.view, data_.stats))).detach();
            std::tie(st.z_aa_w, st.z_ab_w) =
                mix_weak_features(z_w1a, z_w2a, z_wb, st.bundle.m1, st.bundle.m2);
            st.y_aa_w = softmax_channels(st.z_aa_w);
            st.y_ab_w = softmax_channels(st.z_ab_w);

            for (const Tensor* probs : {&st.y_aa_w, &st.y_ab_w}) {
                auto v = probs->values();
                const std::int64_t hw = probs->numel() / 2;
                for (std::int64_t i = 0; i < hw; ++i)
                    confidences.push_back(std::max(v[i], v[hw + i]));
            }
            states.push_back(std::move(st));
        }

        update_adaptive_threshold(thresh_, confidences);

        double valid_sum = 0.0;
        for (PairState& st : states) {
            const Tensor z_aa_s =
                model_.forward(to_tensor(apply_norm(st.bundle.x_aa, data_.stats)));
            const Tensor z_ab_s =
                model_.forward(to_tensor(apply_norm(st.bundle.x_ab, data_.stats)));
            const Tensor y_aa_s = softmax_channels(z_aa_s);
            const Tensor y_ab_s = softmax_channels(z_ab_s);

            PseudoLabelMap lab_aa, lab_ab;
            if (cfg_.w2s_conf_source == "strong") {
                lab_aa = filter_by_strong_confidence(make_pseudolabel(st.y_aa_w, 0.5), y_aa_s,
                                                     thresh_.tau);
                lab_ab = filter_by_strong_confidence(make_pseudolabel(st.y_ab_w, 0.5), y_ab_s,
                                                     thresh_.tau);
            } else {
                lab_aa = make_pseudolabel(st.y_aa_w, thresh_.tau);
                lab_ab = make_pseudolabel(st.y_ab_w, thresh_.tau);
            }
            valid_sum += 0.5 * (lab_aa.valid_fraction() + lab_ab.valid_fraction());

            l_w2s_aa = l_w2s_aa + w2s_loss(y_aa_s, lab_aa);
            l_w2s_ab = l_w2s_ab + w2s_loss(y_ab_s, lab_ab);
            if (cfg_.weights.lambda_vc > 0.0) {
                l_vc_aa = l_vc_aa + view_consistency_loss(st.z_aa_w, z_aa_s);
                l_vc_ab = l_vc_ab + view_consistency_loss(st.z_ab_w, z_ab_s);
            }
        }
        const double n = static_cast<double>(states.size());
        l_w2s_aa = l_w2s_aa / n;
        l_w2s_ab = l_w2s_ab / n;
        l_vc_aa = l_vc_aa / n;
        l_vc_ab = l_vc_ab / n;
        out.pseudo_valid_fraction = valid_sum / n;
    }

    Tensor l_total = total_loss(l_sup, l_w2s_aa, l_w2s_ab, l_vc_aa, l_vc_ab, cfg_.weights);

    auto& params = model_.parameters();
    for (ParamEntry& p : params) p.tensor.zero_grad();
    backward(l_total);
    for (std::size_t i = 0; i < params.size(); ++i)
        sgd_update(params[i].tensor.mutable_values(), params[i].tensor.grad(), velocities_[i],
                   cfg_.lr, cfg_.momentum);

    out.total = l_total.item();
    out.sup = l_sup.item();
    out.w2s_aa = l_w2s_aa.item();
    out.w2s_ab = l_w2s_ab.item();
    out.vc_aa = l_vc_aa.item();
    out.vc_ab = l_vc_ab.item();
    out.tau = thresh_.tau;
    return out;
}

StepLosses Trainer::run_one_step() {
    EpochPlan plan = plan_epoch(epoch_);
    while (static_cast<int>(step_) >= plan.steps) {
        ++epoch_;
        step_ = 0;
        plan = plan_epoch(epoch_);
    }

    std::vector<const Sample*> labeled;
    const std::size_t n_labeled = plan.labeled_order.size();
    for (int j = 0; j < cfg_.batch_size; ++j)
        labeled.push_back(plan.labeled_order[(step_ * cfg_.batch_size + j) % n_labeled]);

    std::vector<std::pair<const Sample*, const Sample*>> pairs;
    if (!plan.pairs.empty()) {
        const std::size_t base = static_cast<std::size_t>(step_) * cfg_.batch_size;
        for (int j = 0; j < cfg_.batch_size && base + j < plan.pairs.size(); ++j)
            pairs.push_back(plan.pairs[base + j]);
    }

    StepLosses losses = train_step(labeled, pairs, epoch_, step_);
    ++step_;
    if (static_cast<int>(step_) >= plan.steps) {
        ++epoch_;
        step_ = 0;
    }
    return losses;
}

void Trainer::run(const std::function<void(int, const StepLosses&, double)>& on_epoch) {
    while (epoch_ < static_cast<std::uint64_t>(cfg_.epochs)) {
        const std::uint64_t current = epoch_;
        const auto start = std::chrono::steady_clock::now();
        StepLosses sum;
        int steps = 0;
        while (epoch_ == current) {
            const StepLosses s = run_one_step();
            sum.total += s.total;
            sum.sup += s.sup;
            sum.w2s_aa += s.w2s_aa;
            sum.w2s_ab += s.w2s_ab;
            sum.vc_aa += s.vc_aa;
            sum.vc_ab += s.vc_ab;
            sum.pseudo_valid_fraction += s.pseudo_valid_fraction;
            sum.tau = s.tau;
            ++steps;
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_epoch) {
            StepLosses mean = sum;
            mean.total /= steps;
            mean.sup /= steps;
            mean.w2s_aa /= steps;
            mean.w2s_ab /= steps;
            mean.vc_aa /= steps;
            mean.vc_ab /= steps;
            mean.pseudo_valid_fraction /= steps;
            on_epoch(static_cast<int>(current), mean, seconds);
        }
    }
}

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ckpt;
    auto& params = model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto v = params[i].tensor.values();
        ckpt.params.emplace_back(params[i].name, std::vector<double>(v.begin(), v.end()));
        ckpt.velocities.emplace_back(params[i].name, velocities_[i]);
    }
    ckpt.thresh_ema = thresh_.ema;
    ckpt.thresh_tau = thresh_.tau;
    ckpt.master_seed = cfg_.seed;
    ckpt.epoch = epoch_;
    ckpt.step_in_epoch = step_;
    ckpt.config_text = config_to_text(cfg_);
    return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
    load_parameters(model_, ckpt);
    auto& params = model_.parameters();
    if (ckpt.velocities.size() != params.size())
        throw InputError("Trainer::restore: velocity count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, data] = ckpt.velocities[i];
        if (name != params[i].name || data.size() != velocities_[i].size())
            throw InputError("Trainer::restore: velocity mismatch for " + name);
        velocities_[i] = data;
    }
    thresh_.ema = ckpt.thresh_ema;
    thresh_.tau = ckpt.thresh_tau;
    if (ckpt.master_seed != cfg_.seed)
        throw InputError("Trainer::restore: checkpoint seed differs from config seed");
    epoch_ = ckpt.epoch;
    step_ = ckpt.step_in_epoch;
}

EvalResult evaluate(SegmentationModel& model, const Dataset& dataset) {
    if (dataset.manifest.test_ids.empty()) throw ContractError("evaluate: empty test split");
    EvalResult result;
    for (const std::string& id : dataset.manifest.test_ids) {
        const Sample& sample = dataset.at(id);
        if (!sample.mask) throw ContractError("evaluate: test sample " + id + " has no mask");
        const Tensor logits = model.forward(to_tensor(apply_norm(sample.image, dataset.stats)));
        auto v = logits.values();
        const std::int64_t hw = logits.numel() / 2;
        Image pred(1, sample.image.height, sample.image.width);
        for (std::int64_t i = 0; i < hw; ++i) pred.data[i] = v[hw + i] > v[i] ? 1.0 : 0.0;
        accumulate(result.counts, pred, *sample.mask);
    }
    result.scores = scores(result.counts);
    return result;
}

std::string metrics_csv_row(const std::string& split, const std::string& ratio,
                            std::uint64_t seed, const Scores& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.8f,%.8f,%.8f,%.8f", split.c_str(), ratio.c_str(),
                  static_cast<unsigned long long>(seed), s.iou0, s.iou1, s.miou, s.acc);
    return buf;
}

void append_metrics_csv(const std::string& path, const std::string& split,
                        const std::string& ratio, std::uint64_t seed, const Scores& s) {
    if (!fs::path(path).parent_path().empty())
        fs::create_directories(fs::path(path).parent_path());
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw InputError("append_metrics_csv: cannot open " + path);
    if (fresh) out << "split,ratio,seed,iou0,iou1,miou,acc\n";
    out << metrics_csv_row(split, ratio, seed, s) << "\n";
}

} // namespace cloudmatch

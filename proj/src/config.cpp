#include "wsed/config.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include "wsed/error.hpp"

namespace wsed {

namespace {

std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

class KeyValues {
public:
    explicit KeyValues(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path.string());
        std::string line;
        std::size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string t = strip(line);
            if (t.empty()) continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path.string() + ":" + std::to_string(row) + ": expected key = value");
            const std::string key = strip(t.substr(0, eq));
            if (key.empty())
                throw ConfigError(path.string() + ":" + std::to_string(row) + ": empty key");
            if (!values_.try_emplace(key, strip(t.substr(eq + 1))).second)
                throw ConfigError(path.string() + ":" + std::to_string(row) + ": duplicate key '" + key +
                                  "'");
        }
    }

    std::optional<std::string> get(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        used_.insert(key);
        return it->second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) {
        auto v = get(key);
        return v ? *v : fallback;
    }

    template <typename T>
    T number(const std::string& key, T fallback) {
        auto v = get(key);
        if (!v) return fallback;
        std::istringstream is(*v);
        T out;
        is >> out;
        if (is.fail() || !is.eof())
            throw ConfigError("config key '" + key + "': cannot parse '" + *v + "' as a number");
        return out;
    }

    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_) {
            (void)v;
            if (!used_.count(k)) out.push_back(k);
        }
        return out;
    }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

void require_exists(const std::filesystem::path& p, const std::string& key) {
    if (!std::filesystem::exists(p))
        throw ConfigError("config key '" + key + "': path does not exist: " + p.string());
}

} // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    KeyValues kv(path);
    const std::filesystem::path base = std::filesystem::absolute(path).parent_path();
    RunConfig cfg;

    cfg.audio_root = resolve(base, kv.get_or("audio_root", "."));
    cfg.weak_manifest = resolve(base, kv.get_or("weak_manifest", ""));
    cfg.val_manifest = resolve(base, kv.get_or("val_manifest", ""));
    cfg.val_strong = resolve(base, kv.get_or("val_strong", ""));
    cfg.predict_manifest = resolve(base, kv.get_or("predict_manifest", ""));
    if (cfg.predict_manifest.empty()) cfg.predict_manifest = cfg.val_manifest;
    cfg.feature_dir = resolve(base, kv.get_or("feature_dir", "features"));
    cfg.output_dir = resolve(base, kv.get_or("output_dir", "output"));

    if (cfg.weak_manifest.empty()) throw ConfigError("config key 'weak_manifest' is required");
    require_exists(cfg.weak_manifest, "weak_manifest");
    require_exists(cfg.audio_root, "audio_root");
    if (!cfg.val_manifest.empty()) require_exists(cfg.val_manifest, "val_manifest");
    if (!cfg.val_strong.empty()) require_exists(cfg.val_strong, "val_strong");
    if (!cfg.predict_manifest.empty() && cfg.predict_manifest != cfg.val_manifest)
        require_exists(cfg.predict_manifest, "predict_manifest");
    if (cfg.val_manifest.empty() != cfg.val_strong.empty())
        throw ConfigError("config keys 'val_manifest' and 'val_strong' must be set together");

    cfg.features.sample_rate = kv.number<int>("sample_rate", 44100);
    cfg.features.window = kv.number<Index>("window", 1014);
    cfg.features.hop = kv.number<Index>("hop", 507);
    cfg.features.n_mels = kv.number<Index>("n_mels", 40);
    cfg.features.fmin = kv.number<double>("fmin", 0.0);
    cfg.features.fmax = kv.number<double>("fmax", 0.0);
    cfg.features.log_floor = kv.number<double>("log_floor", 1e-10);
    if (cfg.features.sample_rate <= 0) throw ConfigError("config key 'sample_rate' must be positive");
    if (cfg.features.window < 2 || cfg.features.hop < 1)
        throw ConfigError("config keys 'window'/'hop' out of range");

    cfg.model.n_mels = cfg.features.n_mels;
    cfg.model.conv_maps = kv.number<Index>("conv_maps", 64);
    cfg.model.gru_units = kv.number<Index>("gru_units", 64);
    cfg.model.dense_units = kv.number<Index>("dense_units", 64);
    {
        std::istringstream is(kv.get_or("pools", "5,4,2"));
        std::string item;
        std::vector<Index> pools;
        while (std::getline(is, item, ',')) pools.push_back(std::stoll(strip(item)));
        if (pools.size() != 3) throw ConfigError("config key 'pools' must list three factors");
        cfg.model.pools = {pools[0], pools[1], pools[2]};
    }
    cfg.model.bn_eps = kv.number<double>("bn_eps", 1e-3);
    cfg.model.bn_momentum = kv.number<double>("bn_momentum", 0.99);
    cfg.model.validate();

    cfg.train.loss = loss_kind_from_string(kv.get_or("loss", "mmm"));
    cfg.train.epochs = kv.number<long>("epochs", 300);
    cfg.train.batch_size = kv.number<Index>("batch_size", 32);
    cfg.train.adam.lr = kv.number<double>("lr", 1e-3);
    cfg.train.adam.beta1 = kv.number<double>("beta1", 0.9);
    cfg.train.adam.beta2 = kv.number<double>("beta2", 0.999);
    cfg.train.adam.eps = kv.number<double>("adam_eps", 1e-8);
    cfg.train.seed = kv.number<std::uint64_t>("seed", 0);
    cfg.train.checkpoint_interval = kv.number<long>("checkpoint_interval", 0);
    cfg.train.eval_interval = kv.number<long>("eval_interval", 1);
    cfg.train.threshold = kv.number<double>("threshold", 0.5);
    cfg.train.anchor = hnh_anchor_from_string(kv.get_or("anchor", "majority"));
    if (cfg.train.epochs < 1) throw ConfigError("config key 'epochs' must be >= 1");
    if (!(cfg.train.adam.lr > 0.0)) throw ConfigError("config key 'lr' must be positive");
    if (!(cfg.train.adam.beta1 >= 0.0 && cfg.train.adam.beta1 < 1.0) ||
        !(cfg.train.adam.beta2 >= 0.0 && cfg.train.adam.beta2 < 1.0))
        throw ConfigError("config keys 'beta1'/'beta2' must lie in [0,1)");
    if (!(cfg.train.threshold > 0.0 && cfg.train.threshold < 1.0))
        throw ConfigError("config key 'threshold' must lie in (0,1)");

    cfg.label_map.target = kv.get_or("label_map.target", "event");
    {
        std::istringstream is(kv.get_or("label_map.positive", ""));
        std::string item;
        while (std::getline(is, item, ';')) {
            const std::string lab = strip(item);
            if (!lab.empty()) cfg.label_map.positive.insert(lab);
        }
    }
    cfg.threads = kv.number<int>("threads", 0);

    const auto unused = kv.unused();
    if (!unused.empty()) throw ConfigError("unknown config key '" + unused.front() + "'");
    return cfg;
}

} // namespace wsed

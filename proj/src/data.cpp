#include "ivs/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

namespace ivs {

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

double channel_gain(std::size_t c) {
    constexpr double gains[] = {1.0, 0.7, 0.4};
    return gains[c % 3];
}

// Signed offset of a from b on a ring of the given circumference, in [-n/2, n/2).
double ring_offset(double a, double b, double n) {
    double d = std::fmod(a - b, n);
    if (d < -n / 2) d += n;
    if (d >= n / 2) d -= n;
    return d;
}

double spatial_scale(const SyntheticDatasetSpec& spec) { return static_cast<double>(spec.clip_shape[3]) / 16.0; }

// Sum of three low-frequency plane waves, shared by every frame and channel.
std::vector<double> background_texture(std::size_t H, std::size_t W, double amplitude, std::mt19937_64& rng) {
    std::vector<double> tex(H * W, 0.0);
    std::uniform_int_distribution<int> freq(0, 2);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 3; ++k) {
        int fy = freq(rng), fx = freq(rng);
        if (fx == 0 && fy == 0) fx = 1;
        const double ph = phase(rng);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                tex[y * W + x] += amplitude / 3.0 *
                                  std::sin(2.0 * std::numbers::pi * (fx * static_cast<double>(x) / W +
                                                                     fy * static_cast<double>(y) / H) +
                                           ph);
    }
    return tex;
}

void add_texture(Tensor& frames, const std::vector<double>& tex) {
    const std::size_t C = frames.extent(0), T = frames.extent(1), HW = frames.extent(2) * frames.extent(3);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < HW; ++i) frames[(c * T + t) * HW + i] += channel_gain(c) * tex[i];
}

void add_noise(Tensor& frames, double sigma, std::mt19937_64& rng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& v : frames.data()) v += normal(rng);
}

void draw_action(Tensor& frames, const Segment& span, const ClassPattern& p, double y0, double x0) {
    const std::size_t C = frames.extent(0), T = frames.extent(1), H = frames.extent(2), W = frames.extent(3);
    const double cs = std::cos(p.direction), sn = std::sin(p.direction);
    for (std::int64_t t = span.start; t < span.end; ++t) {
        const double tau = static_cast<double>(t - span.start);
        const double cy = y0 + sn * p.speed * tau;
        const double cx = x0 + cs * p.speed * tau;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double dy = ring_offset(static_cast<double>(y), cy, static_cast<double>(H));
                const double dx = ring_offset(static_cast<double>(x), cx, static_cast<double>(W));
                const double along = dx * cs + dy * sn;
                const double across = -dx * sn + dy * cs;
                const double v = std::exp(-(along * along / (2 * p.sigma_along * p.sigma_along) +
                                            across * across / (2 * p.sigma_across * p.sigma_across)));
                for (std::size_t c = 0; c < C; ++c)
                    frames[((c * T + static_cast<std::size_t>(t)) * H + y) * W + x] += channel_gain(c) * v;
            }
    }
}

void draw_phased_action(Tensor& frames, const Segment& span, const SyntheticDatasetSpec& spec, std::size_t label,
                        std::mt19937_64& rng) {
    const double H = static_cast<double>(frames.extent(2)), W = static_cast<double>(frames.extent(3));
    const ClassPattern p = class_pattern(spec, label);
    double y0 = H / 2, x0 = W / 2;
    if (spec.random_phase) {
        // Start anywhere along the class trajectory.
        const double u = std::uniform_real_distribution<double>(-W / 2, W / 2)(rng);
        y0 += std::sin(p.direction) * u;
        x0 += std::cos(p.direction) * u;
    }
    draw_action(frames, span, p, y0, x0);
}

std::size_t draw_segment_length(const SyntheticDatasetSpec& spec, std::mt19937_64& rng) {
    if (spec.min_segment == spec.max_segment) return spec.min_segment;
    return std::uniform_int_distribution<std::size_t>(spec.min_segment, spec.max_segment)(rng);
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
    if (n_classes < 2) throw ConfigError("synthetic dataset needs at least 2 action classes");
    if (clips_per_class < 2) throw ConfigError("synthetic dataset needs at least 2 clips per class");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    if (!(background_amplitude >= 0.0)) throw ConfigError("background amplitude must be >= 0");
    for (auto e : clip_shape)
        if (e == 0) throw ConfigError("clip extents must be >= 1");
    if (min_segment == 0 || min_segment > max_segment) throw ConfigError("segment length range is empty");
    for (auto [a, b] : confusable_pairs)
        if (a < 1 || a > n_classes || b < 1 || b > n_classes || a == b)
            throw ConfigError("confusable pair (" + std::to_string(a) + ", " + std::to_string(b) +
                              ") must name two distinct action classes");
}

nlohmann::json to_json(const SyntheticDatasetSpec& s) {
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [a, b] : s.confusable_pairs) pairs.push_back({a, b});
    return {{"seed", s.seed},
            {"n_classes", s.n_classes},
            {"clips_per_class", s.clips_per_class},
            {"background_clips", s.background_clips},
            {"noise_sigma", s.noise_sigma},
            {"random_phase", s.random_phase},
            {"background_amplitude", s.background_amplitude},
            {"confusable_pairs", pairs},
            {"clip_shape", s.clip_shape},
            {"min_segment", s.min_segment},
            {"max_segment", s.max_segment}};
}

SyntheticDatasetSpec dataset_spec_from_json(const nlohmann::json& j, SyntheticDatasetSpec s) {
    try {
        s.seed = j.value("seed", s.seed);
        s.n_classes = j.value("n_classes", s.n_classes);
        s.clips_per_class = j.value("clips_per_class", s.clips_per_class);
        s.background_clips = j.value("background_clips", s.background_clips);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.random_phase = j.value("random_phase", s.random_phase);
        s.background_amplitude = j.value("background_amplitude", s.background_amplitude);
        if (j.contains("confusable_pairs")) {
            s.confusable_pairs.clear();
            for (const auto& p : j.at("confusable_pairs"))
                s.confusable_pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
        }
        s.clip_shape = j.value("clip_shape", s.clip_shape);
        s.min_segment = j.value("min_segment", s.min_segment);
        s.max_segment = j.value("max_segment", s.max_segment);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed dataset spec: ") + e.what());
    }
    return s;
}

ClassPattern class_pattern(const SyntheticDatasetSpec& spec, std::size_t class_id) {
    if (class_id < 1 || class_id > spec.n_classes)
        throw std::out_of_range("no pattern for class " + std::to_string(class_id));
    // Classes sharing a confusable pair share a base direction; the second
    // member of a pair is elongated instead of round.
    std::vector<std::size_t> base(spec.n_classes + 1, 0);
    std::vector<bool> elongated(spec.n_classes + 1, false);
    std::size_t bases = 0;
    for (std::size_t c = 1; c <= spec.n_classes; ++c) {
        bool shared = false;
        for (auto [a, b] : spec.confusable_pairs) {
            if (b == c && a < c) {
                base[c] = base[a];
                elongated[c] = true;
                shared = true;
                break;
            }
            if (a == c && b < c) {
                base[c] = base[b];
                elongated[c] = true;
                shared = true;
                break;
            }
        }
        if (!shared) base[c] = bases++;
    }
    const double scale = spatial_scale(spec);
    ClassPattern p;
    p.direction = 2.0 * std::numbers::pi * static_cast<double>(base[class_id]) / static_cast<double>(bases) + 0.25;
    p.speed = scale;
    if (elongated[class_id]) {
        p.sigma_along = 2.8 * scale;
        p.sigma_across = 0.8 * scale;
    } else {
        p.sigma_along = 1.5 * scale;
        p.sigma_across = 1.5 * scale;
    }
    return p;
}

Tensor resample_segment(const Tensor& frames, const Segment& segment, std::size_t length) {
    if (frames.rank() != 4) throw ShapeError("expected a channels x time x height x width volume");
    if (!segment.valid() || segment.end > static_cast<std::int64_t>(frames.extent(1)))
        throw std::out_of_range("segment [" + std::to_string(segment.start) + ", " + std::to_string(segment.end) +
                                ") lies outside a video of " + std::to_string(frames.extent(1)) + " frames");
    if (length == 0) throw ShapeError("resample length must be positive");
    const std::size_t C = frames.extent(0), T = frames.extent(1), HW = frames.extent(2) * frames.extent(3);
    const auto len = static_cast<std::size_t>(segment.length());
    Tensor out(Shape{C, length, frames.extent(2), frames.extent(3)});
    for (std::size_t k = 0; k < length; ++k) {
        // centre of the k-th output bin, rounded down to a source frame
        const std::size_t src = static_cast<std::size_t>(segment.start) + std::min(len - 1, (2 * k + 1) * len / (2 * length));
        for (std::size_t c = 0; c < C; ++c)
            std::copy_n(frames.data().begin() + static_cast<std::ptrdiff_t>((c * T + src) * HW), HW,
                        out.data().begin() + static_cast<std::ptrdiff_t>((c * length + k) * HW));
    }
    return out;
}

Dataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
    spec.validate();
    const auto [C, L, H, W] = spec.clip_shape;
    Dataset ds{spec, {}};
    const std::size_t total = spec.background_clips + spec.n_classes * spec.clips_per_class;
    ds.clips.reserve(total);
    for (std::size_t j = 0; j < total; ++j) {
        const std::size_t label =
            j < spec.background_clips ? 0 : 1 + (j - spec.background_clips) / spec.clips_per_class;
        auto rng = stream_rng(spec.seed, j);
        const std::size_t S = draw_segment_length(spec, rng);
        Tensor frames(Shape{C, S, H, W});
        if (spec.background_amplitude > 0.0) add_texture(frames, background_texture(H, W, spec.background_amplitude, rng));
        const Segment span{0, static_cast<std::int64_t>(S)};
        if (label > 0) draw_phased_action(frames, span, spec, label, rng);
        add_noise(frames, spec.noise_sigma, rng);

        char id[32];
        std::snprintf(id, sizeof id, "src-%05zu", j);
        ds.clips.push_back({resample_segment(frames, span, L), label, id, span});
    }
    return ds;
}

UntrimmedVideo generate_untrimmed_video(const SyntheticDatasetSpec& spec, std::string id, std::size_t total_length,
                                        std::size_t n_instances, std::uint64_t seed, std::size_t min_gap) {
    spec.validate();
    if (total_length < spec.min_segment) throw ConfigError("untrimmed video is shorter than one action");
    auto rng = stream_rng(seed, 0x5eed'0000'0000ULL);
    const auto [C, L, H, W] = spec.clip_shape;
    (void)L;

    std::vector<std::size_t> lengths;
    for (std::size_t i = 0; i < n_instances; ++i) lengths.push_back(draw_segment_length(spec, rng));
    auto needed = [&] {
        std::size_t n = (lengths.size() + 1) * min_gap;
        for (auto l : lengths) n += l;
        return n;
    };
    while (!lengths.empty() && needed() > total_length) lengths.pop_back();

    // Split the slack into len+1 gaps by sorted cut points.
    const std::size_t slack = total_length - needed();
    std::uniform_int_distribution<std::size_t> cut(0, slack);
    std::vector<std::size_t> cuts;
    for (std::size_t i = 0; i < lengths.size(); ++i) cuts.push_back(cut(rng));
    std::sort(cuts.begin(), cuts.end());

    UntrimmedVideo video{std::move(id), Tensor(Shape{C, total_length, H, W}), {}};
    if (spec.background_amplitude > 0.0)
        add_texture(video.frames, background_texture(H, W, spec.background_amplitude, rng));

    std::uniform_int_distribution<std::size_t> cls(1, spec.n_classes);
    std::size_t cursor = 0, prev_cut = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        cursor += min_gap + (cuts[i] - prev_cut);
        prev_cut = cuts[i];
        const Segment seg{static_cast<std::int64_t>(cursor), static_cast<std::int64_t>(cursor + lengths[i])};
        const std::size_t label = cls(rng);
        draw_phased_action(video.frames, seg, spec, label, rng);
        video.instances.push_back({video.id, seg, label});
        cursor += lengths[i];
    }
    add_noise(video.frames, spec.noise_sigma, rng);
    return video;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "clips", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    nlohmann::json clips = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
        const auto& c = dataset.clips[i];
        char name[32];
        std::snprintf(name, sizeof name, "clips/clip_%05zu", i);
        save_tensor(c.volume, dir / name);
        clips.push_back({{"file", name},
                         {"label", c.label},
                         {"video_id", c.video_id},
                         {"segment", {c.segment.start, c.segment.end}}});
    }
    nlohmann::json manifest{{"format", kDatasetFormat}, {"spec", to_json(dataset.spec)}, {"clips", clips}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("no dataset manifest at " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
        if (manifest.value("format", "") != kDatasetFormat) throw IoError("unsupported dataset format");
        Dataset ds{dataset_spec_from_json(manifest.at("spec")), {}};
        for (const auto& c : manifest.at("clips")) {
            Clip clip;
            clip.volume = load_tensor<double>(dir / c.at("file").get<std::string>());
            clip.label = c.at("label");
            clip.video_id = c.at("video_id");
            clip.segment = {c.at("segment").at(0), c.at("segment").at(1)};
            ds.clips.push_back(std::move(clip));
        }
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed dataset manifest: " + std::string(e.what()));
    }
}

std::vector<PairSample> sample_pairs(const Dataset& dataset, std::size_t batch, double same_ratio,
                                     std::mt19937_64& rng) {
    if (!(same_ratio >= 0.0 && same_ratio <= 1.0)) throw ConfigError("same_ratio must lie in [0, 1]");
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.clips.size(); ++i) by_label[dataset.clips[i].label].push_back(i);

    std::vector<std::size_t> pairable;  // labels with >= 2 clips
    std::vector<std::size_t> labels;
    for (const auto& [label, idx] : by_label) {
        labels.push_back(label);
        if (idx.size() >= 2) pairable.push_back(label);
    }
    const auto n_same = static_cast<std::size_t>(std::ceil(static_cast<double>(batch) * same_ratio - 1e-9));
    const std::size_t n_diff = batch - n_same;
    if (labels.size() < 2 || pairable.empty())
        throw ConfigError("dataset too small for pair sampling: need >= 2 classes and >= 2 clips in some class");

    auto pick = [&rng](const std::vector<std::size_t>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::vector<PairSample> pairs;
    pairs.reserve(batch);
    for (std::size_t k = 0; k < n_same; ++k) {
        const auto& pool = by_label[pick(pairable)];
        const std::size_t a = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
        std::size_t b = std::uniform_int_distribution<std::size_t>(0, pool.size() - 2)(rng);
        if (b >= a) ++b;
        pairs.push_back({pool[a], pool[b], VerificationSignal{true}});
    }
    for (std::size_t k = 0; k < n_diff; ++k) {
        const std::size_t ia = std::uniform_int_distribution<std::size_t>(0, labels.size() - 1)(rng);
        std::size_t ib = std::uniform_int_distribution<std::size_t>(0, labels.size() - 2)(rng);
        if (ib >= ia) ++ib;
        pairs.push_back({pick(by_label[labels[ia]]), pick(by_label[labels[ib]]), VerificationSignal{false}});
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return pairs;
}

}  // namespace ivs

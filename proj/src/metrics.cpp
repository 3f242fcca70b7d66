#include "fpad/metrics.hpp"

#include "fpad/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace fpad {

const SpeciesErrors* EvalReport::find(Species s) const {
    for (const auto& e : species)
        if (e.species == s) return &e;
    return nullptr;
}

std::set<Species> default_unknown_species() {
    std::set<Species> out;
    for (Species s : kAllSpecies)
        if (is_unknown_pai(s)) out.insert(s);
    return out;
}

namespace {

void check_scores(std::span<const ScoredSample> scored) {
    for (const auto& s : scored)
        if (!std::isfinite(s.score) || s.score < 0.0 || s.score > 1.0)
            throw ConfigError("score for " + s.record_id + " is not a finite value in [0, 1]");
}

}  // namespace

EvalReport compute_report(std::span<const ScoredSample> scored, double threshold,
                          const std::set<Species>& unknown_species) {
    if (scored.empty()) throw ConfigError("cannot build a report from zero scored samples");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ConfigError("threshold must lie in [0, 1], got " + std::to_string(threshold));
    check_scores(scored);

    EvalReport report;
    report.threshold = threshold;
    std::map<Species, SpeciesErrors> attacks;
    BonafideErrors live;
    for (const auto& s : scored) {
        if (!is_attack(s.species)) {
            ++live.n_live;
            if (s.score >= threshold) ++live.n_misclassified;
            continue;
        }
        auto [it, inserted] = attacks.try_emplace(s.species, SpeciesErrors{s.species});
        ++it->second.n_attacks;
        if (s.score < threshold) ++it->second.n_misclassified;
    }
    for (Species sp : kAllSpecies) {
        if (!is_attack(sp)) continue;
        auto it = attacks.find(sp);
        if (it == attacks.end()) {
            report.omitted.push_back(sp);
            continue;
        }
        it->second.unknown = unknown_species.count(sp) > 0;
        report.species.push_back(it->second);
    }
    if (live.n_live > 0) report.bonafide = live;
    return report;
}

ErrorRates error_rates(std::span<const ScoredSample> scored, double threshold) {
    std::size_t na = 0, nl = 0, ea = 0, el = 0;
    for (const auto& s : scored) {
        if (is_attack(s.species)) {
            ++na;
            if (s.score < threshold) ++ea;
        } else {
            ++nl;
            if (s.score >= threshold) ++el;
        }
    }
    ErrorRates r;
    if (na) r.apcer = static_cast<double>(ea) / static_cast<double>(na);
    if (nl) r.bpcer = static_cast<double>(el) / static_cast<double>(nl);
    return r;
}

DeerResult compute_deer(std::span<const ScoredSample> scored) {
    check_scores(scored);
    std::vector<double> attack, live;
    for (const auto& s : scored) (is_attack(s.species) ? attack : live).push_back(s.score);
    if (attack.empty() || live.empty()) throw ConfigError("D-EER needs both attack and bonafide samples");
    std::sort(attack.begin(), attack.end());
    std::sort(live.begin(), live.end());

    std::vector<double> thresholds;
    thresholds.reserve(attack.size() + live.size() + 1);
    thresholds.insert(thresholds.end(), attack.begin(), attack.end());
    thresholds.insert(thresholds.end(), live.begin(), live.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(std::nextafter(thresholds.back(), std::numeric_limits<double>::infinity()));

    const double na = static_cast<double>(attack.size()), nl = static_cast<double>(live.size());
    auto rates = [&](double t) {
        const auto below_a = std::lower_bound(attack.begin(), attack.end(), t) - attack.begin();
        const auto below_l = std::lower_bound(live.begin(), live.end(), t) - live.begin();
        return ErrorRates{static_cast<double>(below_a) / na, (nl - static_cast<double>(below_l)) / nl};
    };

    ErrorRates prev = rates(thresholds.front());
    for (std::size_t j = 0; j < thresholds.size(); ++j) {
        const ErrorRates cur = rates(thresholds[j]);
        const double d = cur.apcer - cur.bpcer;
        if (d >= 0.0) {
            if (d == 0.0 || j == 0) return {100.0 * cur.apcer, thresholds[j]};
            const double dp = prev.apcer - prev.bpcer;
            const double alpha = -dp / (d - dp);
            const double eer = prev.apcer + alpha * (cur.apcer - prev.apcer);
            const double t = thresholds[j - 1] + alpha * (thresholds[j] - thresholds[j - 1]);
            return {100.0 * eer, t};
        }
        prev = cur;
    }
    // Unreachable: the last threshold sits above every score, so APCER = 1 and BPCER = 0.
    return {100.0 * prev.apcer, thresholds.back()};
}

std::string format_percent(double percent) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", percent);
    return buf;
}

}  // namespace fpad

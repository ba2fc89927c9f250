#include "angiodit/dataset/report.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "angiodit/core/error.hpp"

namespace angiodit::dataset {

namespace {

std::vector<std::string> lesion_words(Lesion l) {
    switch (l) {
        case Lesion::Microaneurysms: return {"microaneurysms"};
        case Lesion::Leakage: return {"leakage"};
        case Lesion::NonPerfusion: return {"non-perfusion"};
        case Lesion::Neovascularization: return {"neovascularization"};
        case Lesion::DiscStaining: return {"disc", "staining"};
        case Lesion::MacularEdema: return {"macular", "edema"};
    }
    return {};
}

const char* lesion_sentence(Lesion l) {
    switch (l) {
        case Lesion::Microaneurysms:
            return "Scattered microaneurysms appear as persistent hyperfluorescent dots from the venous phase.";
        case Lesion::Leakage: return "Fluorescein leakage enlarges and brightens through the late phase.";
        case Lesion::NonPerfusion: return "A capillary non-perfusion area remains dark without vessel filling.";
        case Lesion::Neovascularization: return "Neovascularization near the optic disc shows progressive leakage.";
        case Lesion::DiscStaining: return "Late-stage staining of the optic disc is visible.";
        case Lesion::MacularEdema: return "Petal-like accumulation of fluorescence in the macular area.";
    }
    return "";
}

const char* laterality_word(Laterality l) { return l == Laterality::Left ? "Left" : "Right"; }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary v({"<pad>", "left", "right", "eye", "ffa", "microaneurysms", "leakage", "non-perfusion",
                               "neovascularization", "disc", "staining", "macular", "edema", "tortuous", "normal",
                               "brvo", "crvo", "npdr", "pcv", "amd", "csc", "rp"});
    return v;
}

const std::string& Vocabulary::word(std::int64_t id) const {
    if (id < 0 || id >= size()) throw ConfigError("vocabulary: id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
}

std::int64_t Vocabulary::id(const std::string& word) const {
    for (std::size_t i = 1; i < words_.size(); ++i)
        if (words_[i] == word) return static_cast<std::int64_t>(i);
    return -1;
}

std::vector<std::int64_t> Vocabulary::tokenize(const std::string& text) const {
    std::vector<std::int64_t> ids;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            const std::int64_t i = id(cur);
            if (i > 0) ids.push_back(i);
            cur.clear();
        }
    };
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) || ch == '-') cur.push_back(static_cast<char>(std::tolower(u)));
        else flush();
    }
    flush();
    return ids;
}

std::vector<std::int64_t> lesion_tokens(const std::vector<Lesion>& lesions, Laterality laterality) {
    const Vocabulary& v = Vocabulary::standard();
    std::vector<Lesion> sorted = lesions;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::int64_t> ids;
    for (Lesion l : sorted)
        for (const auto& w : lesion_words(l)) ids.push_back(v.id(w));
    ids.push_back(v.id(laterality == Laterality::Left ? "left" : "right"));
    ids.push_back(v.id("eye"));
    ids.push_back(v.id("ffa"));
    return ids;
}

Report case_to_report(const SyntheticCase& c) {
    std::ostringstream os;
    for (Lesion l : c.lesions) os << lesion_name(l) << ',';
    os << laterality_word(c.laterality) << " eye FFA:";
    if (c.lesions.empty()) {
        os << " 1. No obvious abnormalities were observed.";
    } else {
        int n = 1;
        for (Lesion l : c.lesions) os << ' ' << n++ << ". " << lesion_sentence(l);
    }
    return {os.str(), lesion_tokens(c.lesions, c.laterality)};
}

ParsedReport parse_report(const std::string& text) {
    const std::string marker = " eye FFA:";
    const auto pos = text.find(marker);
    if (pos == std::string::npos) throw ConfigError("report: missing '<Laterality> eye FFA:' header");
    const auto comma = text.rfind(',', pos);
    const std::size_t word_start = comma == std::string::npos ? 0 : comma + 1;
    const std::string lat = trim(text.substr(word_start, pos - word_start));
    ParsedReport r;
    if (lat == "Left") r.laterality = Laterality::Left;
    else if (lat == "Right") r.laterality = Laterality::Right;
    else throw ConfigError("report: unknown laterality '" + lat + "'");
    const std::string prefix = comma == std::string::npos ? "" : text.substr(0, comma);
    std::stringstream ss(prefix);
    std::string term;
    while (std::getline(ss, term, ',')) {
        term = trim(term);
        if (term.empty()) continue;
        bool found = false;
        for (Lesion l : all_lesions()) {
            if (term == lesion_name(l)) {
                r.lesions.push_back(l);
                found = true;
            }
        }
        if (!found) throw ConfigError("report: unknown lesion term '" + term + "'");
    }
    std::sort(r.lesions.begin(), r.lesions.end());
    r.lesions.erase(std::unique(r.lesions.begin(), r.lesions.end()), r.lesions.end());
    return r;
}

std::vector<Lesion> lesions_in_tokens(const std::vector<std::int64_t>& ids) {
    const Vocabulary& v = Vocabulary::standard();
    std::vector<Lesion> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] <= 0 || ids[i] >= v.size()) continue;
        const std::string& w = v.word(ids[i]);
        const std::string next = i + 1 < ids.size() && ids[i + 1] > 0 && ids[i + 1] < v.size() ? v.word(ids[i + 1]) : "";
        if (w == "microaneurysms") out.push_back(Lesion::Microaneurysms);
        else if (w == "leakage") out.push_back(Lesion::Leakage);
        else if (w == "non-perfusion") out.push_back(Lesion::NonPerfusion);
        else if (w == "neovascularization") out.push_back(Lesion::Neovascularization);
        else if (w == "disc" && next == "staining") out.push_back(Lesion::DiscStaining);
        else if (w == "macular" && next == "edema") out.push_back(Lesion::MacularEdema);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace angiodit::dataset

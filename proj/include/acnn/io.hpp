#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acnn/core.hpp"

namespace acnn {

// --- descriptor matrices ----------------------------------------------------

inline constexpr std::uint64_t kDescriptorMagic = 0x414344531ULL;

/// Binary descriptor file: versioned header then row-major 64-bit floats.
inline void save_descriptors_binary(const Eigen::MatrixXd& desc, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write descriptor file: " + path);
    write_u64(os, kDescriptorMagic);
    write_u64(os, static_cast<std::uint64_t>(desc.rows()));
    write_u64(os, static_cast<std::uint64_t>(desc.cols()));
    for (int r = 0; r < desc.rows(); ++r)
        for (int c = 0; c < desc.cols(); ++c) write_f64(os, desc(r, c));
    if (!os) throw IOError("write failure: " + path);
}

/// Text descriptor file: one whitespace-separated row per vertex.
inline void save_descriptors_text(const Eigen::MatrixXd& desc, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot write descriptor file: " + path);
    char buf[64];
    for (int r = 0; r < desc.rows(); ++r) {
        for (int c = 0; c < desc.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", desc(r, c));
            os << (c ? " " : "") << buf;
        }
        os << "\n";
    }
    if (!os) throw IOError("write failure: " + path);
}

/// Loads either format; binary is recognized by its magic header.
inline Eigen::MatrixXd load_descriptors(const std::string& path) {
    {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IOError("cannot open descriptor file: " + path);
        std::uint64_t magic = 0;
        try {
            magic = read_u64(is);
        } catch (const IOError&) {
        }
        if (magic == kDescriptorMagic) {
            auto rows = static_cast<int>(read_u64(is));
            auto cols = static_cast<int>(read_u64(is));
            Eigen::MatrixXd desc(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) desc(r, c) = read_f64(is);
            return desc;
        }
    }
    std::ifstream is(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (row.empty()) continue;
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(path + " line " + std::to_string(lineno) +
                             ": inconsistent column count");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(path + ": empty descriptor file");
    Eigen::MatrixXd desc(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            desc(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    return desc;
}

// --- point maps -------------------------------------------------------------

/// One 0-based reference index per line; line number = query vertex.
inline void save_point_map(const std::vector<int>& assignment, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot write map file: " + path);
    for (int idx : assignment) os << idx << "\n";
    if (!os) throw IOError("write failure: " + path);
}

inline std::vector<int> load_point_map(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open map file: " + path);
    std::vector<int> assignment;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            assignment.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw ParseError(path + " line " + std::to_string(lineno) + ": bad index '" + line + "'");
        }
    }
    return assignment;
}

// --- CSV --------------------------------------------------------------------

inline void save_curve_csv(const std::vector<double>& radii, const std::vector<double>& fractions,
                           const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot write curve file: " + path);
    os << "radius,fraction\n";
    char buf[80];
    for (std::size_t i = 0; i < radii.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", radii[i], fractions[i]);
        os << buf;
    }
    if (!os) throw IOError("write failure: " + path);
}

inline void save_loss_csv(const std::vector<double>& losses, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot write loss file: " + path);
    os << "step,loss\n";
    char buf[80];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, losses[i]);
        os << buf;
    }
    if (!os) throw IOError("write failure: " + path);
}

}  // namespace acnn

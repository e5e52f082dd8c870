#include <doctest.h>

#include <Eigen/Geometry>

#include "springtwin/skinning.hpp"
#include "support.hpp"

using namespace springtwin;

namespace {

Eigen::Vector3d ev(const Vec3& v) { return {v.x, v.y, v.z}; }
Vec3 vv(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  return Eigen::AngleAxisd(rng.uniform(-3.1, 3.1), axis.normalized()).toRotationMatrix();
}

}  // namespace

TEST_CASE("rotations: identity, rigid 90 degrees about z, translation") {
  Rng rng(1);
  const auto nodes = test::random_cloud(rng, 8, 0.1);
  std::vector<std::vector<NodeIndex>> nb(8);
  for (NodeIndex i = 0; i < 8; ++i)
    for (NodeIndex j = 0; j < 8; ++j)
      if (i != j) nb[i].push_back(j);

  for (const auto& r : estimate_node_rotations(nodes, nodes, nb)) CHECK(r.isApprox(Eigen::Matrix3d::Identity(), 1e-12));

  const Eigen::Matrix3d rz = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  std::vector<Vec3> rot, moved;
  for (const Vec3& p : nodes) {
    rot.push_back(vv(rz * ev(p)));
    moved.push_back(p + Vec3{0.3, -0.2, 1.0});
  }
  for (const auto& r : estimate_node_rotations(nodes, rot, nb)) CHECK((r - rz).cwiseAbs().maxCoeff() < 1e-10);
  for (const auto& r : estimate_node_rotations(nodes, moved, nb)) CHECK((r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);

  std::vector<std::vector<NodeIndex>> thin{{1}, {0, 2}, {1}};
  const std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  for (const auto& r : estimate_node_rotations(line, line, thin)) CHECK(r == Eigen::Matrix3d::Identity());
}

TEST_CASE("bind_skin: weights") {
  const std::vector<Vec3> nodes{{-1, 0, 0}, {3, 0, 0}, {1, 5, 0}};
  const std::vector<SkinParticle> parts{SkinParticle{{0, 0, 0}}};
  const SkinBinding one = bind_skin(parts, nodes, 1);
  CHECK(one.nodes[0] == 0);
  CHECK(one.weights[0] == 1.0);

  const SkinBinding two = bind_skin(parts, nodes, 2);
  CHECK(two.nodes == std::vector<NodeIndex>{0, 1});
  CHECK(two.weights[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(two.weights[1] == doctest::Approx(0.25).epsilon(1e-15));

  const std::vector<Vec3> sym{{-1, 0, 0}, {1, 0, 0}};
  const SkinBinding half = bind_skin(parts, sym, 2);
  CHECK(half.weights[0] == 0.5);
  CHECK(half.weights[1] == 0.5);

  // Scaling every distance leaves the weights unchanged.
  std::vector<Vec3> scaled;
  for (const Vec3& n : nodes) scaled.push_back(n * 2.5);
  const SkinBinding s2 = bind_skin(parts, scaled, 2);
  CHECK(s2.weights[0] == doctest::Approx(two.weights[0]).epsilon(1e-14));

  const std::vector<SkinParticle> on_node{SkinParticle{{3, 0, 0}}};
  const SkinBinding c = bind_skin(on_node, nodes, 2);
  CHECK(c.nodes[0] == 1);
  CHECK(c.weights[0] > 0.999999);
}

TEST_CASE("deform_skin: translation, rigid rotation, single neighbour, unit orientation") {
  Rng rng(2);
  const auto nodes = test::random_cloud(rng, 200, 0.1);
  const auto topo = build_springs(nodes, 0.05, 8, 1.0);
  const auto nb = node_neighborhoods(topo, nodes);
  auto parts = sample_skin_particles(nodes, 1000, 0.01, 3);
  for (auto& p : parts) p.orientation = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
  const SkinBinding bind = bind_skin(parts, nodes, 4);

  std::vector<Vec3> moved;
  const Vec3 t{0.1, -0.2, 0.05};
  for (const Vec3& p : nodes) moved.push_back(p + t);
  const auto rots = estimate_node_rotations(nodes, moved, nb);
  const auto out = deform_skin(parts, bind, nodes, moved, rots);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    CHECK(norm(out[i].center - (parts[i].center + t)) < 1e-12);
    CHECK(std::abs(dot(out[i].orientation, parts[i].orientation)) > 1 - 1e-12);
    CHECK(out[i].scale == parts[i].scale);
    CHECK(out[i].color == parts[i].color);
  }

  Vec3 centroid;
  for (const Vec3& p : nodes) centroid += p;
  centroid = centroid / 200.0;
  const Eigen::Matrix3d r = random_rotation(rng);
  std::vector<Vec3> spun;
  for (const Vec3& p : nodes) spun.push_back(centroid + vv(r * ev(p - centroid)));
  const auto rr = estimate_node_rotations(nodes, spun, nb);
  const auto sp = deform_skin(parts, bind, nodes, spun, rr);
  const Quat qr = Quat::from_matrix(r);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Vec3 want = centroid + vv(r * ev(parts[i].center - centroid));
    CHECK(norm(sp[i].center - want) < 1e-8);
    const Quat q = qr * parts[i].orientation;
    CHECK(std::abs(std::abs(dot(sp[i].orientation, q)) - 1.0) < 1e-6);
    CHECK(std::abs(sp[i].orientation.norm() - 1.0) < 1e-9);
  }

  const SkinBinding single = bind_skin(parts, nodes, 1);
  const auto one = deform_skin(parts, single, nodes, spun, rr);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const NodeIndex k = single.nodes[i];
    const Vec3 want = spun[k] + vv(rr[k] * ev(parts[i].center - nodes[k]));
    CHECK(norm(one[i].center - want) < 1e-12);
  }
}

TEST_CASE("quaternion <-> matrix round trip") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Matrix3d r = random_rotation(rng);
    CHECK((Quat::from_matrix(r).to_matrix() - r).cwiseAbs().maxCoeff() < 1e-12);
  }
}

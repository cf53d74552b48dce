//! Batch Levenberg-Marquardt over the stacked whitened residuals.
//!
//! The normal equations are solved by eliminating the landmark blocks
//! first (they are block diagonal: no factor connects two landmarks) and
//! Cholesky-factoring the reduced pose system. Pose increments apply on the
//! manifold through the se(3) exponential; landmark increments follow each
//! shape's retraction.

use super::factors::{GraphError, Var, VarState};
use super::FactorGraph;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    /// Stop when the relative cost decrease of an accepted step falls
    /// below this.
    pub convergence_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iters: 50,
            lambda_init: 1e-4,
            convergence_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

const LAMBDA_MAX: f64 = 1e10;

struct Workspace {
    /// Landmark ids in state order with their tangent dimensions.
    landmark_slots: Vec<(u64, usize)>,
    slot_of: BTreeMap<u64, usize>,
    n_pose_dims: usize,
}

impl FactorGraph {
    fn workspace(&self) -> Workspace {
        let landmark_slots: Vec<(u64, usize)> = self
            .landmarks()
            .values()
            .map(|l| (l.id, self.var_state(Var::Landmark(l.id)).dim()))
            .collect();
        let slot_of = landmark_slots
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (*id, i))
            .collect();
        Workspace {
            landmark_slots,
            slot_of,
            n_pose_dims: 6 * self.pose_count(),
        }
    }

    /// Run Levenberg-Marquardt until convergence or the iteration cap.
    /// Cost is monotone non-increasing across accepted steps; the estimates
    /// of every pose and landmark are updated in place.
    pub fn optimize(&mut self) -> Result<OptimizeResult, GraphError> {
        let ws = self.workspace();
        let mut cost = self.cost()?;
        let initial_cost = cost;
        let mut trace = vec![cost];
        let mut lambda = self.config.lm.lambda_init;
        let mut iterations = 0;
        let mut converged = false;

        if self.factor_count() == 0 || self.pose_count() == 0 {
            return Ok(OptimizeResult {
                initial_cost,
                final_cost: cost,
                iterations: 0,
                cost_trace: trace,
                converged: true,
            });
        }

        'outer: for _ in 0..self.config.lm.max_iters {
            iterations += 1;
            let system = self.assemble(&ws)?;

            // Inner damping loop: retry with larger lambda until a step
            // reduces the cost.
            let mut accepted = false;
            let mut solve_failed_at_max = false;
            while lambda <= LAMBDA_MAX {
                match self.solve_damped(&ws, &system, lambda) {
                    Some((dp, dl)) => {
                        let backup = self.save_states(&ws);
                        self.apply_delta(&ws, &dp, &dl);
                        match self.cost() {
                            Ok(new_cost) if new_cost <= cost => {
                                let rel = (cost - new_cost) / cost.max(1e-300);
                                cost = new_cost;
                                trace.push(cost);
                                lambda = (lambda / 3.0).max(1e-12);
                                accepted = true;
                                if rel < self.config.lm.convergence_tol {
                                    converged = true;
                                    break 'outer;
                                }
                                break;
                            }
                            _ => {
                                // Step increased cost (or hit a singular
                                // configuration): roll back and damp more.
                                self.restore_states(backup);
                                lambda *= 10.0;
                            }
                        }
                    }
                    None => {
                        // Cholesky failure despite damping.
                        solve_failed_at_max = true;
                        lambda *= 10.0;
                    }
                }
            }
            if !accepted {
                if solve_failed_at_max {
                    return Err(GraphError::SingularSystem);
                }
                // Cost cannot be reduced at any damping level: done.
                converged = true;
                break;
            }
        }

        Ok(OptimizeResult {
            initial_cost,
            final_cost: cost,
            iterations,
            cost_trace: trace,
            converged,
        })
    }

    fn save_states(&self, ws: &Workspace) -> Vec<(Var, VarState)> {
        let mut out = Vec::with_capacity(self.pose_count() + ws.landmark_slots.len());
        for i in 0..self.pose_count() {
            out.push((Var::Pose(i), self.var_state(Var::Pose(i))));
        }
        for (id, _) in &ws.landmark_slots {
            out.push((Var::Landmark(*id), self.var_state(Var::Landmark(*id))));
        }
        out
    }

    fn restore_states(&mut self, backup: Vec<(Var, VarState)>) {
        for (var, state) in backup {
            self.set_var_state(var, state);
        }
    }

    fn apply_delta(&mut self, ws: &Workspace, dp: &DVector<f64>, dl: &[DVector<f64>]) {
        for i in 0..self.pose_count() {
            let state = self.var_state(Var::Pose(i));
            let delta = dp.rows(6 * i, 6).iter().copied().collect::<Vec<f64>>();
            self.set_var_state(Var::Pose(i), state.retract(&delta));
        }
        for (slot, (id, _)) in ws.landmark_slots.iter().enumerate() {
            let state = self.var_state(Var::Landmark(*id));
            let delta: Vec<f64> = dl[slot].iter().copied().collect();
            self.set_var_state(Var::Landmark(*id), state.retract(&delta));
        }
    }

    fn assemble(&self, ws: &Workspace) -> Result<System, GraphError> {
        let np = ws.n_pose_dims;
        let mut hpp = DMatrix::<f64>::zeros(np, np);
        let mut gp = DVector::<f64>::zeros(np);
        let mut hll: Vec<DMatrix<f64>> = ws
            .landmark_slots
            .iter()
            .map(|(_, d)| DMatrix::zeros(*d, *d))
            .collect();
        let mut gl: Vec<DVector<f64>> = ws
            .landmark_slots
            .iter()
            .map(|(_, d)| DVector::zeros(*d))
            .collect();
        let mut hpl: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
        let mut lm_poses: Vec<Vec<usize>> = vec![Vec::new(); ws.landmark_slots.len()];

        let analytic = self.config.analytic_jacobians;
        for factor in self.factors() {
            let vars = factor.variables();
            let states: Vec<VarState> = vars.iter().map(|v| self.var_state(*v)).collect();
            let r = factor.weighted_residual(&states)?;
            let jacs = factor.jacobian(&states, analytic)?;
            for (vi, var_i) in vars.iter().enumerate() {
                let ji = &jacs[vi];
                match var_i {
                    Var::Pose(pi) => {
                        gp.rows_mut(6 * pi, 6)
                            .axpy(-1.0, &(ji.transpose() * &r), 1.0);
                    }
                    Var::Landmark(id) => {
                        let slot = ws.slot_of[id];
                        gl[slot].axpy(-1.0, &(ji.transpose() * &r), 1.0);
                    }
                }
                for (vj, var_j) in vars.iter().enumerate() {
                    let block = ji.transpose() * &jacs[vj];
                    match (var_i, var_j) {
                        (Var::Pose(pi), Var::Pose(pj)) => {
                            let mut view = hpp.view_mut((6 * pi, 6 * pj), (6, 6));
                            view += block;
                        }
                        (Var::Pose(pi), Var::Landmark(id)) => {
                            let slot = ws.slot_of[id];
                            let entry = hpl
                                .entry((*pi, slot))
                                .or_insert_with(|| DMatrix::zeros(6, block.ncols()));
                            *entry += block;
                            if !lm_poses[slot].contains(pi) {
                                lm_poses[slot].push(*pi);
                            }
                        }
                        (Var::Landmark(id), Var::Landmark(_)) => {
                            let slot = ws.slot_of[id];
                            hll[slot] += block;
                        }
                        (Var::Landmark(_), Var::Pose(_)) => {
                            // lower-left mirror of the pose-landmark block;
                            // reconstructed from hpl during the solve
                        }
                    }
                }
            }
        }
        Ok(System {
            hpp,
            gp,
            hll,
            gl,
            hpl,
            lm_poses,
        })
    }

    /// Solve (H + lambda I) delta = g via the landmark Schur complement.
    /// Returns None when a Cholesky factorization fails at this damping.
    fn solve_damped(
        &self,
        ws: &Workspace,
        sys: &System,
        lambda: f64,
    ) -> Option<(DVector<f64>, Vec<DVector<f64>>)> {
        let np = ws.n_pose_dims;
        let mut s = sys.hpp.clone();
        for i in 0..np {
            s[(i, i)] += lambda;
        }
        let mut rhs = sys.gp.clone();

        // Invert each damped landmark block and fold it into the reduced
        // pose system.
        let mut hll_inv = Vec::with_capacity(sys.hll.len());
        for (slot, h) in sys.hll.iter().enumerate() {
            let mut hd = h.clone();
            for i in 0..hd.nrows() {
                hd[(i, i)] += lambda;
            }
            let inv = hd.cholesky()?.inverse();
            let w = &inv * &sys.gl[slot];
            for &pi in &sys.lm_poses[slot] {
                let b = &sys.hpl[&(pi, slot)];
                rhs.rows_mut(6 * pi, 6).axpy(-1.0, &(b * &w), 1.0);
                for &pj in &sys.lm_poses[slot] {
                    let bj = &sys.hpl[&(pj, slot)];
                    let m = b * &inv * bj.transpose();
                    let mut view = s.view_mut((6 * pi, 6 * pj), (6, 6));
                    view -= m;
                }
            }
            hll_inv.push(inv);
        }

        let chol = s.cholesky()?;
        let dp = chol.solve(&rhs);

        let mut dl = Vec::with_capacity(sys.hll.len());
        for (slot, inv) in hll_inv.iter().enumerate() {
            let mut rhs_l = sys.gl[slot].clone();
            for &pi in &sys.lm_poses[slot] {
                let b = &sys.hpl[&(pi, slot)];
                rhs_l.axpy(-1.0, &(b.transpose() * dp.rows(6 * pi, 6)), 1.0);
            }
            dl.push(inv * rhs_l);
        }
        Some((dp, dl))
    }
}

struct System {
    hpp: DMatrix<f64>,
    gp: DVector<f64>,
    hll: Vec<DMatrix<f64>>,
    gl: Vec<DVector<f64>>,
    hpl: BTreeMap<(usize, usize), DMatrix<f64>>,
    lm_poses: Vec<Vec<usize>>,
}

#[cfg(test)]
mod tests {
    use crate::backend::{BackendConfig, FactorGraph};
    use crate::geometry::{
        compose, inverse, relative, se3_exp, CylinderModel, EllipsoidModel, Pose, ShapeModel,
        Twist,
    };
    use crate::worldsim::Detection;
    use nalgebra::{Vector2, Vector3};

    fn cylinder_world(x: f64, y: f64) -> ShapeModel {
        ShapeModel::Cylinder(
            CylinderModel::new(Vector3::new(x, y, 0.0), Vector3::z(), 0.3).unwrap(),
        )
    }

    fn detect(world_shape: &ShapeModel, robot: &Pose, t: usize) -> Detection {
        Detection {
            class_label: "trunk".into(),
            shape: world_shape.transformed(&inverse(robot)).unwrap(),
            observing_key_pose: t,
        }
    }

    #[test]
    fn zero_noise_graph_reaches_machine_zero_cost() {
        let mut g = FactorGraph::new(BackendConfig::default());
        let truth: Vec<Pose> = (0..6)
            .map(|i| Pose::from_xyz_yaw(i as f64, 0.0, 0.0, 0.1 * i as f64))
            .collect();
        let landmarks = [cylinder_world(3.0, 2.0), cylinder_world(6.0, -2.0)];
        for (t, pose) in truth.iter().enumerate() {
            let id = g.add_key_pose(0, pose).unwrap();
            for lm in &landmarks {
                if (lm.centroid() - pose.translation).norm() < 8.0 {
                    g.add_detection(id, &detect(lm, pose, t)).unwrap();
                }
            }
        }
        let result = g.optimize().unwrap();
        assert!(result.final_cost < 1e-12, "cost {}", result.final_cost);
        for (t, pose) in truth.iter().enumerate() {
            let est = g.poses()[t].estimate;
            assert!((est.translation - pose.translation).norm() < 1e-6);
        }
        for lm in g.landmarks().values() {
            let truth_centroid = if lm.shape.centroid().y > 0.0 {
                Vector3::new(3.0, 2.0, 0.0)
            } else {
                Vector3::new(6.0, -2.0, 0.0)
            };
            assert!((lm.shape.centroid() - truth_centroid).norm() < 1e-6);
        }
    }

    #[test]
    fn ellipsoid_centroid_triangulates_from_two_bearings() {
        let mut g = FactorGraph::new(BackendConfig::default());
        let p0 = Pose::identity();
        let p1 = Pose::from_xyz_yaw(4.0, 0.0, 0.0, 0.0);
        let truth = Vector3::new(2.0, 3.0, 0.8);

        let kp0 = g.add_key_pose_raw(0, 0, p0, None, Some(p0));
        let kp1 = g.add_key_pose_raw(0, 1, p1, Some((kp0, relative(&p0, &p1))), None);

        let det = |robot: &Pose, t: usize| Detection {
            class_label: "chair".into(),
            shape: ShapeModel::Ellipsoid(
                EllipsoidModel::new(
                    inverse(robot).transform_point(&truth),
                    Vector2::new(0.4, 0.9),
                )
                .unwrap(),
            ),
            observing_key_pose: t,
        };
        let id0 = g.add_detection(kp0, &det(&p0, 0)).unwrap();
        let id1 = g.add_detection(kp1, &det(&p1, 1)).unwrap();
        assert_eq!(id0, id1, "both bearings should hit the same landmark");

        // Pull the landmark off the truth and let the optimizer refit it.
        if let Some(lm) = g.landmarks.get_mut(&id0) {
            if let ShapeModel::Ellipsoid(e) = &mut lm.shape {
                e.c += Vector3::new(0.4, -0.3, 0.2);
            }
        }
        g.index_dirty = true;
        let result = g.optimize().unwrap();
        assert!(result.final_cost < 1e-14);

        // Closed-form oracle: the intersection of the two measured rays is
        // the point both range-bearing observations describe exactly.
        let lm = &g.landmarks()[&id0];
        assert!(
            (lm.shape.centroid() - truth).norm() < 1e-5,
            "triangulated {:?} vs {truth:?}",
            lm.shape.centroid()
        );
    }

    #[test]
    fn loop_with_drift_is_corrected_by_reobservation() {
        // Square loop; odometry drifts but the four corner landmarks are
        // re-observed on the return leg.
        let side = 10usize;
        let mut truth = Vec::new();
        let mut yaw = 0.0_f64;
        let mut pos = Vector3::zeros();
        for leg in 0..4 {
            yaw = (leg as f64) * std::f64::consts::FRAC_PI_2;
            let dir = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
            for _ in 0..side {
                truth.push(Pose::from_xyz_yaw(pos.x, pos.y, 0.0, yaw));
                pos += dir;
            }
        }
        truth.push(Pose::from_xyz_yaw(pos.x, pos.y, 0.0, yaw));

        let landmarks: Vec<ShapeModel> = vec![
            cylinder_world(3.0, 1.5),
            cylinder_world(8.0, -1.5),
            cylinder_world(10.0, 5.0),
            cylinder_world(5.0, 10.5),
            cylinder_world(-1.0, 7.0),
        ];

        // Constant small odometry bias produces drift.
        let bias = se3_exp(&Twist {
            rho: Vector3::new(0.012, -0.008, 0.0),
            phi: Vector3::new(0.0, 0.0, 0.004),
        });
        let mut odom = vec![truth[0]];
        for i in 1..truth.len() {
            let delta = compose(&relative(&truth[i - 1], &truth[i]), &bias);
            let prev = *odom.last().unwrap();
            odom.push(compose(&prev, &delta));
        }

        let mut g = FactorGraph::new(BackendConfig {
            association: crate::backend::AssociationConfig {
                default_max_centroid_distance: 2.0,
                ..Default::default()
            },
            ..BackendConfig::default()
        });
        for (t, op) in odom.iter().enumerate() {
            let id = g.add_key_pose(0, op).unwrap();
            for lm in &landmarks {
                if (lm.centroid() - truth[t].translation).norm() < 6.0 {
                    g.add_detection(id, &detect(lm, &truth[t], t)).unwrap();
                }
            }
        }

        let raw_rmse = rmse(&odom, &truth);
        let result = g.optimize().unwrap();
        let est: Vec<Pose> = g.poses().iter().map(|p| p.estimate).collect();
        let opt_rmse = rmse(&est, &truth);
        assert!(
            opt_rmse < raw_rmse * 0.5,
            "optimized {opt_rmse:.3} vs raw {raw_rmse:.3}"
        );
        // cost trace is monotone non-increasing over accepted steps
        for w in result.cost_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(result.final_cost <= result.initial_cost);
    }

    fn rmse(est: &[Pose], truth: &[Pose]) -> f64 {
        let n = est.len() as f64;
        (est.iter()
            .zip(truth)
            .map(|(e, t)| (e.translation - t.translation).norm_squared())
            .sum::<f64>()
            / n)
            .sqrt()
    }

    #[test]
    fn analytic_and_fd_jacobians_agree_end_to_end() {
        // Same graph optimized under both Jacobian routes lands on the
        // same estimates.
        let build = |analytic: bool| {
            let mut g = FactorGraph::new(BackendConfig {
                analytic_jacobians: analytic,
                ..BackendConfig::default()
            });
            let truth = [
                Pose::identity(),
                Pose::from_xyz_yaw(1.0, 0.2, 0.0, 0.3),
                Pose::from_xyz_yaw(2.0, 0.1, 0.0, 0.5),
            ];
            let lm = cylinder_world(3.0, 1.0);
            for (t, pose) in truth.iter().enumerate() {
                let id = g.add_key_pose(0, pose).unwrap();
                g.add_detection(id, &detect(&lm, pose, t)).unwrap();
            }
            // perturb the landmark so there is something to solve
            if let Some(l) = g.landmarks.get_mut(&0) {
                if let ShapeModel::Cylinder(c) = &mut l.shape {
                    c.b += Vector3::new(0.3, -0.2, 0.0);
                }
            }
            g.index_dirty = true;
            g.optimize().unwrap();
            g.landmarks()[&0].shape.centroid()
        };
        let fd = build(false);
        let an = build(true);
        assert!((fd - an).norm() < 1e-6, "fd {fd:?} vs analytic {an:?}");
    }

    #[test]
    fn empty_graph_is_trivially_converged() {
        let mut g = FactorGraph::new(BackendConfig::default());
        let r = g.optimize().unwrap();
        assert!(r.converged);
        assert_eq!(r.final_cost, 0.0);
    }

    #[test]
    fn single_anchored_pose_stays_put() {
        let mut g = FactorGraph::new(BackendConfig::default());
        let start = Pose::from_xyz_yaw(1.0, 2.0, 0.0, 0.4);
        g.add_key_pose(0, &start).unwrap();
        let r = g.optimize().unwrap();
        assert!(r.final_cost < 1e-18);
        assert!((g.poses()[0].estimate.translation - start.translation).norm() < 1e-9);
    }

    #[test]
    fn optimize_is_deterministic() {
        let build = || {
            let mut g = FactorGraph::new(BackendConfig::default());
            let truth = [
                Pose::identity(),
                Pose::from_xyz_yaw(1.0, 0.0, 0.0, 0.2),
                Pose::from_xyz_yaw(2.0, 0.3, 0.0, 0.4),
            ];
            let lms = [cylinder_world(2.0, 1.0), cylinder_world(4.0, -1.0)];
            for (t, pose) in truth.iter().enumerate() {
                let noisy = compose(
                    pose,
                    &se3_exp(&Twist {
                        rho: Vector3::new(0.01 * t as f64, -0.02, 0.0),
                        phi: Vector3::new(0.0, 0.0, 0.005),
                    }),
                );
                let id = g.add_key_pose(0, &noisy).unwrap();
                for lm in &lms {
                    g.add_detection(id, &detect(lm, pose, t)).unwrap();
                }
            }
            g.optimize().unwrap();
            serde_json::to_string(&g.landmark_records()).unwrap()
        };
        assert_eq!(build(), build());
    }
}

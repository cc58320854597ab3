use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, RigidTransform};

/// How the figure interacts with the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionMode {
    /// Sitting on the object.
    SeatedOn,
    /// Held in the right hand, arm raised.
    HandHeldRight,
    /// Held in the left hand.
    HandHeldLeft,
    /// Carried with both hands.
    TwoHanded,
}

fn rx(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix()
}

fn rz(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix()
}

const DOWN: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

/// Joint angles (radians) and pelvis height of one frame, in the body frame
/// (y up, facing +z, the figure's right side at -x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub pelvis_height: f64,
    pub lean: f64,
    /// Forward raise, sideways raise, elbow flexion; index 0 is the right arm.
    pub arm_pitch: [f64; 2],
    pub arm_abduction: [f64; 2],
    pub elbow: [f64; 2],
    pub hip_pitch: [f64; 2],
    pub knee: [f64; 2],
}

/// Joint positions in the body frame (before scale, yaw and placement).
#[derive(Debug, Clone, Copy)]
pub struct Skeleton {
    pub pelvis: Vector3<f64>,
    pub neck: Vector3<f64>,
    pub head: Vector3<f64>,
    pub shoulder: [Vector3<f64>; 2],
    pub elbow: [Vector3<f64>; 2],
    pub wrist: [Vector3<f64>; 2],
    pub hand: [Vector3<f64>; 2],
    pub forearm_dir: [Vector3<f64>; 2],
    pub hip: [Vector3<f64>; 2],
    pub knee: [Vector3<f64>; 2],
    pub ankle: [Vector3<f64>; 2],
    pub toe: [Vector3<f64>; 2],
}

pub const UPPER_ARM: f64 = 0.30;
pub const FOREARM: f64 = 0.26;
pub const HAND_OFFSET: f64 = 0.07;
pub const THIGH: f64 = 0.45;
pub const SHIN: f64 = 0.43;
pub const PELVIS_RADIUS: f64 = 0.09;

impl Pose {
    pub fn skeleton(&self) -> Skeleton {
        let pelvis = Vector3::new(0.0, self.pelvis_height, 0.0);
        let spine = rx(self.lean) * Vector3::y();
        let neck = pelvis + 0.5 * spine;
        let head = neck + 0.17 * spine;
        let side = [-1.0, 1.0];
        let mut out = Skeleton {
            pelvis,
            neck,
            head,
            shoulder: [Vector3::zeros(); 2],
            elbow: [Vector3::zeros(); 2],
            wrist: [Vector3::zeros(); 2],
            hand: [Vector3::zeros(); 2],
            forearm_dir: [Vector3::zeros(); 2],
            hip: [Vector3::zeros(); 2],
            knee: [Vector3::zeros(); 2],
            ankle: [Vector3::zeros(); 2],
            toe: [Vector3::zeros(); 2],
        };
        for s in 0..2 {
            let sh = neck + Vector3::new(0.18 * side[s], -0.04, 0.0);
            let abd = rz(side[s] * self.arm_abduction[s]);
            let upper = abd * rx(-self.arm_pitch[s]) * DOWN;
            let fore = abd * rx(-(self.arm_pitch[s] + self.elbow[s])) * DOWN;
            out.shoulder[s] = sh;
            out.elbow[s] = sh + UPPER_ARM * upper;
            out.wrist[s] = out.elbow[s] + FOREARM * fore;
            out.hand[s] = out.wrist[s] + HAND_OFFSET * fore;
            out.forearm_dir[s] = fore;
            let hip = pelvis + Vector3::new(0.1 * side[s], -0.03, 0.0);
            let thigh = rx(-self.hip_pitch[s]) * DOWN;
            let shin = rx(-(self.hip_pitch[s] - self.knee[s])) * DOWN;
            out.hip[s] = hip;
            out.knee[s] = hip + THIGH * thigh;
            out.ankle[s] = out.knee[s] + SHIN * shin;
            out.toe[s] = out.ankle[s] + Vector3::new(0.0, -0.03, 0.15);
        }
        out
    }
}

/// Body part the surface points are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Capsule { a: Joint, b: Joint, radius: f64 },
    Sphere { at: Joint, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Joint {
    Pelvis,
    Neck,
    Head,
    Shoulder(usize),
    Elbow(usize),
    Wrist(usize),
    Hand(usize),
    Hip(usize),
    Knee(usize),
    Ankle(usize),
    Toe(usize),
}

impl Skeleton {
    fn joint(&self, j: Joint) -> Vector3<f64> {
        match j {
            Joint::Pelvis => self.pelvis,
            Joint::Neck => self.neck,
            Joint::Head => self.head,
            Joint::Shoulder(s) => self.shoulder[s],
            Joint::Elbow(s) => self.elbow[s],
            Joint::Wrist(s) => self.wrist[s],
            Joint::Hand(s) => self.hand[s],
            Joint::Hip(s) => self.hip[s],
            Joint::Knee(s) => self.knee[s],
            Joint::Ankle(s) => self.ankle[s],
            Joint::Toe(s) => self.toe[s],
        }
    }
}

fn parts() -> Vec<Part> {
    use Joint::*;
    let cap = |a, b, radius| Part::Capsule { a, b, radius };
    let mut p = vec![
        cap(Pelvis, Neck, 0.12),
        cap(Shoulder(0), Shoulder(1), 0.06),
        cap(Hip(0), Hip(1), PELVIS_RADIUS),
        Part::Sphere { at: Head, radius: 0.1 },
    ];
    for s in 0..2 {
        p.extend([
            cap(Shoulder(s), Elbow(s), 0.05),
            cap(Elbow(s), Wrist(s), 0.04),
            Part::Sphere { at: Hand(s), radius: 0.045 },
            cap(Hip(s), Knee(s), 0.07),
            cap(Knee(s), Ankle(s), 0.05),
            cap(Ankle(s), Toe(s), 0.04),
        ]);
    }
    p
}

#[cfg(test)]
/// Index of the part holding the right (0) or left (1) hand sphere.
pub(crate) fn hand_part(side: usize) -> usize {
    parts()
        .iter()
        .position(|p| matches!(p, Part::Sphere { at: Joint::Hand(s), .. } if *s == side))
        .expect("hand part exists")
}

/// Fixed per-point surface parameters. Every frame of every sequence uses the
/// same assignment, so point `i` always lies on the same body location.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceLayout {
    pub(crate) part: Vec<usize>,
    u: Vec<f64>,
    dir: Vec<[f64; 3]>,
    shell: Vec<f64>,
}

fn nominal_length(part: &Part) -> f64 {
    let rest = Pose {
        pelvis_height: 0.95,
        lean: 0.0,
        arm_pitch: [0.0; 2],
        arm_abduction: [0.0; 2],
        elbow: [0.0; 2],
        hip_pitch: [0.0; 2],
        knee: [0.0; 2],
    }
    .skeleton();
    match part {
        Part::Capsule { a, b, .. } => (rest.joint(*a) - rest.joint(*b)).norm(),
        Part::Sphere { .. } => 0.0,
    }
}

impl SurfaceLayout {
    /// Area-proportional assignment of `n` points to body parts with a
    /// Gaussian shell of standard deviation `shell_sigma` around each part.
    pub fn new<R: Rng>(n: usize, shell_sigma: f64, rng: &mut R) -> Self {
        let parts = parts();
        let areas: Vec<f64> = parts
            .iter()
            .map(|p| match p {
                Part::Capsule { radius, .. } => 2.0 * PI * radius * nominal_length(p),
                Part::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let normal = Normal::new(0.0, shell_sigma).expect("finite sigma");
        let mut out = Self {
            part: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            dir: Vec::with_capacity(n),
            shell: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let mut pick = rng.gen::<f64>() * total;
            let mut k = 0;
            while k + 1 < areas.len() && pick >= areas[k] {
                pick -= areas[k];
                k += 1;
            }
            out.part.push(k);
            out.u.push(rng.gen());
            let d: [f64; 3] = UnitSphere.sample(rng);
            out.dir.push(d);
            out.shell.push(normal.sample(rng));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.part.is_empty()
    }

    /// Body-frame surface points for a skeleton.
    pub fn points(&self, sk: &Skeleton) -> Vec<Point3> {
        let parts = parts();
        (0..self.len())
            .map(|i| {
                let v = match parts[self.part[i]] {
                    Part::Capsule { a, b, radius } => {
                        let (pa, pb) = (sk.joint(a), sk.joint(b));
                        let axis = (pb - pa).normalize();
                        let d = Vector3::from(self.dir[i]);
                        // radial direction: the fixed random direction with its axial part removed
                        let mut radial = d - axis * axis.dot(&d);
                        if radial.norm() < 1e-6 {
                            radial = axis.cross(&Vector3::x()).try_normalize(1e-9).unwrap_or(Vector3::z());
                        }
                        pa + (pb - pa) * self.u[i] + radial.normalize() * (radius + self.shell[i])
                    }
                    Part::Sphere { at, radius } => {
                        sk.joint(at) + Vector3::from(self.dir[i]) * (radius + self.shell[i])
                    }
                };
                [v.x, v.y, v.z]
            })
            .collect()
    }
}

/// Per-sequence random parameters of a figure and its motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Performance {
    pub mode: InteractionMode,
    pub placement: [f64; 2],
    pub yaw: f64,
    pub scale: f64,
    freq: [f64; 4],
    phase: [f64; 4],
    amp: [f64; 4],
}

fn wave(t: f64, f: f64, p: f64) -> f64 {
    (2.0 * PI * f * t + p).sin()
}

impl Performance {
    pub fn sample<R: Rng>(mode: InteractionMode, placement_range: f64, yaw_range: f64, rng: &mut R) -> Self {
        let mut arr = |lo: f64, hi: f64| [0; 4].map(|_| rng.gen_range(lo..hi));
        let freq = arr(0.15, 0.6);
        let phase = arr(0.0, 2.0 * PI);
        let amp = arr(0.5, 1.0);
        Self {
            mode,
            placement: [
                rng.gen_range(-placement_range..=placement_range),
                rng.gen_range(-placement_range..=placement_range),
            ],
            yaw: rng.gen_range(-yaw_range..=yaw_range),
            scale: rng.gen_range(0.92..1.08),
            freq,
            phase,
            amp,
        }
    }

    fn w(&self, k: usize, t: f64) -> f64 {
        self.amp[k] * wave(t, self.freq[k], self.phase[k])
    }

    /// Pose at time `t` (seconds). Each mode has its characteristic posture;
    /// limbs not involved in the interaction move freely.
    pub fn pose(&self, t: f64) -> Pose {
        let (w0, w1, w2, w3) = (self.w(0, t), self.w(1, t), self.w(2, t), self.w(3, t));
        let standing = |lean: f64| Pose {
            pelvis_height: 0.95,
            lean,
            arm_pitch: [0.25 + 0.25 * w2, 0.25 - 0.25 * w2],
            arm_abduction: [0.12, 0.12],
            elbow: [0.3 + 0.2 * w3, 0.3 - 0.2 * w3],
            hip_pitch: [0.15 * w3, -0.15 * w3],
            knee: [0.1 + 0.1 * w1, 0.1 - 0.1 * w1],
        };
        match self.mode {
            InteractionMode::SeatedOn => Pose {
                pelvis_height: 0.5,
                lean: 0.15 + 0.15 * w0,
                arm_pitch: [0.5 + 0.3 * w1, 0.5 + 0.3 * w2],
                arm_abduction: [0.1, 0.1],
                elbow: [0.6 + 0.3 * w3, 0.6 - 0.3 * w3],
                hip_pitch: [1.5, 1.5],
                knee: [1.45 + 0.2 * w2, 1.45 - 0.2 * w1],
            },
            InteractionMode::HandHeldRight => {
                let mut p = standing(0.05 * w3);
                p.arm_pitch[0] = 1.7 + 0.4 * w0;
                p.elbow[0] = 0.4 + 0.25 * w1;
                p.arm_abduction[0] = 0.15;
                p
            }
            InteractionMode::HandHeldLeft => {
                let mut p = standing(0.05 * w3);
                p.arm_pitch[1] = 0.9 + 0.35 * w0;
                p.elbow[1] = 0.7 + 0.3 * w1;
                p.arm_abduction[1] = 0.1;
                p
            }
            InteractionMode::TwoHanded => {
                let mut p = standing(0.05 * w3);
                let pitch = 0.95 + 0.25 * w0;
                let elbow = 0.55 + 0.2 * w1;
                p.arm_pitch = [pitch, pitch];
                p.elbow = [elbow, elbow];
                p.arm_abduction = [0.32, 0.32];
                p
            }
        }
    }

    /// Body frame to world: scale, yaw about +y, then ground placement.
    pub fn body_to_world(&self) -> (f64, RigidTransform) {
        (
            self.scale,
            RigidTransform::from_axis_angle([0.0, 1.0, 0.0], self.yaw, [self.placement[0], 0.0, self.placement[1]]),
        )
    }

    /// Object pose in the body frame (before scaling the figure) and the
    /// body-frame contact point it is anchored to.
    pub fn object_in_body(&self, pose: &Pose, sk: &Skeleton, object_half_height: f64) -> (RigidTransform, Vector3<f64>) {
        match self.mode {
            InteractionMode::SeatedOn => {
                // object top touches the underside of the pelvis
                let seat = sk.pelvis - Vector3::new(0.0, PELVIS_RADIUS, 0.0);
                let c = seat - Vector3::new(0.0, object_half_height, 0.0);
                (RigidTransform::new(Matrix3::identity(), c), seat)
            }
            InteractionMode::HandHeldRight => {
                let a = pose.arm_pitch[0] + pose.elbow[0];
                // long axis (local y) perpendicular to the forearm, in the sagittal plane
                let r = rx(-a) * rx(PI / 2.0);
                (RigidTransform::new(r, sk.hand[0]), sk.hand[0])
            }
            InteractionMode::HandHeldLeft => {
                let c = sk.hand[1] + 0.04 * sk.forearm_dir[1];
                (RigidTransform::new(Matrix3::identity(), c), sk.hand[1])
            }
            InteractionMode::TwoHanded => {
                let mid = (sk.hand[0] + sk.hand[1]) / 2.0;
                let c = mid + Vector3::new(0.0, 0.0, 0.035);
                (RigidTransform::new(Matrix3::identity(), c), mid)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standing_figure_stands_on_the_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let perf = Performance::sample(InteractionMode::HandHeldLeft, 0.0, 0.0, &mut rng);
        let sk = perf.pose(0.0).skeleton();
        for s in 0..2 {
            assert!(sk.ankle[s].y > -0.05 && sk.ankle[s].y < 0.2, "{}", sk.ankle[s].y);
        }
        assert!(sk.head.y > 1.5);
    }

    #[test]
    fn layout_is_deterministic_and_sized() {
        let a = SurfaceLayout::new(500, 0.01, &mut ChaCha8Rng::seed_from_u64(1));
        let b = SurfaceLayout::new(500, 0.01, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let sk = Performance::sample(InteractionMode::SeatedOn, 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(2))
            .pose(0.3)
            .skeleton();
        let pts = a.points(&sk);
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn hand_parts_are_spheres() {
        assert_ne!(hand_part(0), hand_part(1));
    }
}

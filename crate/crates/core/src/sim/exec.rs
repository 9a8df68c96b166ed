use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dbn::{slerp, waypoint_path, Features, Pose};
use crate::error::{Error, Result};

use super::World;

pub const FRAME_RATE_HZ: f64 = 10.0;

/// Guards `ceil` against values a rounding error above an integer.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub time_s: f64,
    pub ee_pose: Pose,
    pub features: Features,
    /// Ground-truth object phase, not visible to the learner.
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub frames: Vec<ObservationFrame>,
    /// Index of the first frame at or after each waypoint.
    pub keyframe_frames: Vec<usize>,
    pub contacts_made: usize,
}

impl Execution {
    pub fn final_phase(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.phase)
    }

    /// Index of the waypoint segment containing frame `f`.
    pub fn segment_of(&self, f: usize) -> usize {
        self.keyframe_frames.iter().rposition(|&k| k <= f).unwrap_or(0)
    }
}

/// Piecewise-linear track with cumulative arc length.
struct Track<'a> {
    path: &'a [Pose],
    cum: Vec<f64>,
}

fn pos(p: &Pose) -> [f64; 3] {
    [p[0], p[1], p[2]]
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl<'a> Track<'a> {
    fn new(path: &'a [Pose]) -> Self {
        let mut cum = Vec::with_capacity(path.len());
        cum.push(0.0);
        for w in path.windows(2) {
            let last = *cum.last().expect("non-empty");
            cum.push(last + dist(&pos(&w[0]), &pos(&w[1])));
        }
        Self { path, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().expect("non-empty")
    }

    fn pose_at(&self, s: f64) -> Pose {
        if s >= self.length() {
            return *self.path.last().expect("non-empty");
        }
        let i = self.cum.partition_point(|&c| c <= s).saturating_sub(1);
        let (a, b) = (&self.path[i], &self.path[i + 1]);
        let len = self.cum[i + 1] - self.cum[i];
        let u = if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 };
        let q = slerp([a[3], a[4], a[5], a[6]], [b[3], b[4], b[5], b[6]], u);
        [
            a[0] + u * (b[0] - a[0]),
            a[1] + u * (b[1] - a[1]),
            a[2] + u * (b[2] - a[2]),
            q[0],
            q[1],
            q[2],
            q[3],
        ]
    }

    /// Arc length at which each contact fires. Contacts are sequential: the
    /// next one can only fire after the previous one has.
    fn contact_events(&self, world: &World) -> Vec<f64> {
        let contacts = &world.scenario().contact_waypoints;
        let mut events = Vec::new();
        let push_from = |a: [f64; 3], b: [f64; 3], s0: f64, events: &mut Vec<f64>| {
            let seg_len = dist(&a, &b);
            let mut u0 = 0.0;
            while let Some(c) = contacts.get(events.len()) {
                match first_entry(a, b, c.position, c.radius, u0) {
                    Some(u) => {
                        events.push(s0 + u * seg_len);
                        u0 = u;
                    }
                    None => break,
                }
            }
        };
        if self.path.len() == 1 {
            let p = pos(&self.path[0]);
            push_from(p, p, 0.0, &mut events);
        }
        for (i, w) in self.path.windows(2).enumerate() {
            push_from(pos(&w[0]), pos(&w[1]), self.cum[i], &mut events);
        }
        events
    }
}

/// Smallest `u` in `[u0, 1]` at which `a + u (b - a)` lies within `r` of `c`.
fn first_entry(a: [f64; 3], b: [f64; 3], c: [f64; 3], r: f64, u0: f64) -> Option<f64> {
    let d: [f64; 3] = std::array::from_fn(|i| b[i] - a[i]);
    let f: [f64; 3] = std::array::from_fn(|i| a[i] - c[i]);
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let fd: f64 = f.iter().zip(&d).map(|(x, y)| x * y).sum();
    let ff: f64 = f.iter().map(|v| v * v).sum();
    let cc = ff - r * r;
    if dd == 0.0 {
        return (cc <= 0.0).then_some(u0);
    }
    let disc = fd * fd - dd * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let u1 = (-fd - sq) / dd;
    let u2 = (-fd + sq) / dd;
    if u2 < u0 || u1 > 1.0 {
        None
    } else {
        Some(u1.max(u0))
    }
}

fn frame_count(duration_s: f64) -> usize {
    (duration_s * FRAME_RATE_HZ - CEIL_SLACK).ceil().max(0.0) as usize + 1
}

fn frame_at(time_s: f64) -> usize {
    (time_s * FRAME_RATE_HZ - CEIL_SLACK).ceil().max(0.0) as usize
}

fn run<R: Rng + ?Sized>(
    world: &World,
    track: &Track<'_>,
    hold_s: f64,
    rng: &mut R,
) -> Result<(Vec<ObservationFrame>, usize)> {
    let scn = world.scenario();
    let events = track.contact_events(world);
    let duration = track.length() / scn.speed_mps + hold_s;
    let noise = Normal::new(0.0, scn.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let frames = (0..frame_count(duration))
        .map(|k| {
            let time_s = k as f64 / FRAME_RATE_HZ;
            let s = (time_s * scn.speed_mps).min(track.length());
            let made = events.iter().filter(|&&e| e <= s).count();
            let phase = world.phase_after(made).clamp(0.0, 1.0);
            let mut features = world.feature_map().features(phase);
            if scn.noise_std > 0.0 {
                for v in features.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
            ObservationFrame {
                time_s,
                ee_pose: track.pose_at(s),
                features,
                phase,
            }
        })
        .collect();
    Ok((frames, events.len()))
}

fn check_path(path: &[Pose], hold_s: f64) -> Result<()> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    if path.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Env("non-finite pose in path".into()));
    }
    if !(hold_s >= 0.0) {
        return Err(Error::InvalidArgument("hold time must be non-negative".into()));
    }
    Ok(())
}

/// Follows `path` at the scenario speed, sampling frames at 10 Hz.
pub fn execute_path<R: Rng + ?Sized>(world: &World, path: &[Pose], rng: &mut R) -> Result<Vec<ObservationFrame>> {
    execute_held(world, path, 0.0, rng)
}

/// [`execute_path`] followed by `hold_s` seconds at the final pose.
pub fn execute_held<R: Rng + ?Sized>(
    world: &World,
    path: &[Pose],
    hold_s: f64,
    rng: &mut R,
) -> Result<Vec<ObservationFrame>> {
    check_path(path, hold_s)?;
    Ok(run(world, &Track::new(path), hold_s, rng)?.0)
}

/// Executes the dense path through `waypoints` and reports which frame
/// observes each waypoint.
pub fn execute_waypoints<R: Rng + ?Sized>(
    world: &World,
    waypoints: &[Pose],
    steps_per_segment: usize,
    hold_s: f64,
    rng: &mut R,
) -> Result<Execution> {
    check_path(waypoints, hold_s)?;
    let path = waypoint_path(waypoints, steps_per_segment)?;
    let track = Track::new(&path);
    let (frames, contacts_made) = run(world, &track, hold_s, rng)?;
    let last = frames.len() - 1;
    let speed = world.scenario().speed_mps;
    let keyframe_frames = (0..waypoints.len())
        .map(|k| frame_at(track.cum[k * steps_per_segment] / speed).min(last))
        .collect();
    Ok(Execution {
        frames,
        keyframe_frames,
        contacts_made,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scenario;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(noise: f64) -> World {
        let mut s = Scenario::builtin("open_drawer").unwrap();
        s.noise_std = noise;
        World::new(s).unwrap()
    }

    #[test]
    fn nominal_path_reaches_last_target() {
        let w = world(0.0);
        let ex = execute_waypoints(
            &w,
            &w.scenario().keyframes(),
            10,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(ex.contacts_made, 3);
        assert_eq!(ex.final_phase(), 1.0);
        let phases: Vec<f64> = ex.keyframe_frames.iter().map(|&f| ex.frames[f].phase).collect();
        assert_eq!(phases, vec![0.0, 0.3, 0.65, 1.0, 1.0]);
    }

    #[test]
    fn missing_second_waypoint_stalls() {
        let w = world(0.0);
        let mut kfs = w.scenario().keyframes();
        kfs[2][2] += 0.15;
        let ex = execute_waypoints(&w, &kfs, 10, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ex.contacts_made, 1);
        assert_eq!(ex.final_phase(), 0.3);
    }

    #[test]
    fn noiseless_runs_are_identical() {
        let w = world(0.0);
        let path = waypoint_path(&w.scenario().keyframes(), 5).unwrap();
        let a = execute_path(&w, &path, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = execute_path(&w, &path, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frame_count_matches_duration() {
        let w = world(0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in [0.0, 0.05, 0.1, 0.123, 0.37] {
            let a = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
            let b = [len, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
            let frames = execute_path(&w, &[a, b], &mut rng).unwrap();
            let duration: f64 = len / 0.1;
            assert_eq!(frames.len(), (duration * 10.0 - 1e-9).ceil() as usize + 1);
            for (k, f) in frames.iter().enumerate() {
                assert_eq!(f.time_s, k as f64 / 10.0);
            }
        }
        let held = execute_held(&w, &[[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]], 1.0, &mut rng).unwrap();
        assert_eq!(held.len(), 11);
    }

    #[test]
    fn contact_fires_on_entry() {
        let u = first_entry([0.0; 3], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0], 0.1, 0.0).unwrap();
        assert!((u - 0.4).abs() < 1e-12);
        assert_eq!(first_entry([0.0; 3], [1.0, 0.0, 0.0], [0.5, 0.2, 0.0], 0.1, 0.0), None);
        assert_eq!(first_entry([0.0; 3], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.1, 0.3), None);
        assert_eq!(first_entry([0.0; 3], [0.0; 3], [0.05, 0.0, 0.0], 0.1, 0.0), Some(0.0));
    }

    #[test]
    fn empty_path_is_rejected() {
        assert!(execute_path(&world(0.0), &[], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}

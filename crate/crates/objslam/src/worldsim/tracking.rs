//! Hungarian instance tracking over per-frame detections, with a
//! centroid-spread filter that rejects moving objects.
//!
//! Tracks gate on class label and centroid distance in a common (odometry)
//! frame. A track becomes a confirmed instance once it accumulates enough
//! hits; from then on each matched detection is emitted downstream. Tracks
//! whose detection centroids spread farther than the class extent limit are
//! moving objects and never emit.

use super::hungarian::hungarian_assign;
use super::Detection;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingConfig {
    /// Maximum centroid distance for matching a detection to a track.
    pub gate: f64,
    /// Hits required before a track emits confirmed observations.
    pub confirm_threshold: usize,
    /// Frames a track may go unseen before it is dropped.
    pub max_age: usize,
    /// Per-class centroid spread limit (meters); larger spread = moving.
    #[serde(default)]
    pub class_max_extent: BTreeMap<String, f64>,
    /// Fallback spread limit for classes without an explicit entry.
    pub default_max_extent: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            gate: 1.5,
            confirm_threshold: 3,
            max_age: 5,
            class_max_extent: BTreeMap::new(),
            default_max_extent: 2.0,
        }
    }
}

/// One tracked object instance.
#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u64,
    pub class_label: String,
    /// (frame, detection, map-frame centroid), time ordered.
    pub history: Vec<(usize, Detection, Vector3<f64>)>,
    pub hits: usize,
    pub last_seen: usize,
    min_corner: Vector3<f64>,
    max_corner: Vector3<f64>,
}

impl Track {
    fn new(track_id: u64, frame: usize, det: Detection, centroid: Vector3<f64>) -> Self {
        Track {
            track_id,
            class_label: det.class_label.clone(),
            history: vec![(frame, det, centroid)],
            hits: 1,
            last_seen: frame,
            min_corner: centroid,
            max_corner: centroid,
        }
    }

    fn absorb(&mut self, frame: usize, det: Detection, centroid: Vector3<f64>) {
        self.hits += 1;
        self.last_seen = frame;
        self.min_corner = self.min_corner.inf(&centroid);
        self.max_corner = self.max_corner.sup(&centroid);
        self.history.push((frame, det, centroid));
    }

    fn last_centroid(&self) -> Vector3<f64> {
        self.history.last().expect("tracks are never empty").2
    }

    /// Diagonal of the axis-aligned box spanned by all observed centroids.
    pub fn extent(&self) -> f64 {
        (self.max_corner - self.min_corner).norm()
    }
}

/// Keep a confirmed instance unless its accumulated centroid spread exceeds
/// the class extent limit (strict inequality rejects).
pub fn reject_elongated(track: &Track, class_max_extent: f64) -> bool {
    track.extent() > class_max_extent
}

/// A confirmed per-frame observation ready for the factor-graph back end.
#[derive(Debug, Clone)]
pub struct ConfirmedObservation {
    pub track_id: u64,
    pub detection: Detection,
}

#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub config: TrackingConfig,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackingConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn max_extent_for(&self, class: &str) -> f64 {
        self.config
            .class_max_extent
            .get(class)
            .copied()
            .unwrap_or(self.config.default_max_extent)
    }

    /// Assign this frame's detections to live tracks (Hungarian on centroid
    /// distance, gated by class and distance), open tracks for the rest,
    /// emit confirmed static instances, and drop stale tracks.
    ///
    /// `observations` carry the detection plus its centroid in the common
    /// tracking frame (detections themselves stay in the body frame).
    pub fn update(
        &mut self,
        frame: usize,
        observations: Vec<(Detection, Vector3<f64>)>,
    ) -> Vec<ConfirmedObservation> {
        let mut confirmed = Vec::new();
        let n_tracks = self.tracks.len();
        let n_obs = observations.len();
        let mut matched_obs = vec![false; n_obs];

        if n_tracks > 0 && n_obs > 0 {
            let cost: Vec<Vec<f64>> = self
                .tracks
                .iter()
                .map(|t| {
                    observations
                        .iter()
                        .map(|(det, centroid)| {
                            let d = (t.last_centroid() - centroid).norm();
                            if det.class_label != t.class_label || d > self.config.gate {
                                f64::INFINITY
                            } else {
                                d
                            }
                        })
                        .collect()
                })
                .collect();
            for &(ti, oi) in &hungarian_assign(&cost).pairs {
                matched_obs[oi] = true;
                let (det, centroid) = observations[oi].clone();
                self.tracks[ti].absorb(frame, det, centroid);
                let track = &self.tracks[ti];
                if track.hits >= self.config.confirm_threshold
                    && !reject_elongated(track, self.max_extent_for(&track.class_label))
                {
                    confirmed.push(ConfirmedObservation {
                        track_id: track.track_id,
                        detection: track.history.last().unwrap().1.clone(),
                    });
                }
            }
        }

        for (oi, (det, centroid)) in observations.into_iter().enumerate() {
            if !matched_obs[oi] {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(Track::new(id, frame, det, centroid));
            }
        }

        let max_age = self.config.max_age;
        self.tracks.retain(|t| frame - t.last_seen <= max_age);
        confirmed
    }
}

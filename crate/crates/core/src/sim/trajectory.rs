use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, DriveConfig, TRAJECTORY_STREAM};
use crate::error::{Error, Result};
use crate::geo::EnuPoint;
use crate::roadnet::RoadGraph;

/// Ground truth of the vehicle at one epoch (clock excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEpoch {
    pub time: f64,
    pub position: EnuPoint,
    pub velocity: Vector3<f64>,
    pub segment: usize,
}

/// A segment traversed in one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Leg {
    seg: usize,
    forward: bool,
}

const SUBSTEP: f64 = 0.05;
const LOOKAHEAD: f64 = 150.0;
const SHARP_TURN: f64 = 20.0 * std::f64::consts::PI / 180.0;
const UTURN_SPEED: f64 = 1.0;

struct Route<'g> {
    graph: &'g RoadGraph,
    legs: VecDeque<Leg>,
    /// Speed limit at the end of each leg (entering the next one).
    limits: VecDeque<f64>,
    ended: bool,
}

impl<'g> Route<'g> {
    fn start(&self, leg: Leg) -> EnuPoint {
        let g = &self.graph.segments()[leg.seg].geometry;
        if leg.forward {
            g.a
        } else {
            g.b
        }
    }

    fn exit(&self, leg: Leg) -> EnuPoint {
        let g = &self.graph.segments()[leg.seg].geometry;
        if leg.forward {
            g.b
        } else {
            g.a
        }
    }

    fn direction(&self, leg: Leg) -> (f64, f64) {
        let (dx, dy) = self.graph.segments()[leg.seg].geometry.direction();
        if leg.forward {
            (dx, dy)
        } else {
            (-dx, -dy)
        }
    }

    fn length(&self, leg: Leg) -> f64 {
        self.graph.segments()[leg.seg].geometry.length
    }

    fn continuations(&self, leg: Leg) -> Vec<Leg> {
        let exit = self.exit(leg);
        let mut out = Vec::new();
        for &j in self.graph.successors(leg.seg) {
            let s = &self.graph.segments()[j];
            if s.geometry.a == exit {
                out.push(Leg { seg: j, forward: true });
            } else if s.geometry.b == exit && !s.oneway {
                out.push(Leg { seg: j, forward: false });
            }
        }
        out
    }

    fn turn_limit(&self, from: Leg, to: Leg, turn_speed: f64) -> f64 {
        if from.seg == to.seg {
            return UTURN_SPEED;
        }
        let (ax, ay) = self.direction(from);
        let (bx, by) = self.direction(to);
        let angle = (ax * by - ay * bx).atan2(ax * bx + ay * by).abs();
        if angle > SHARP_TURN {
            turn_speed
        } else {
            f64::INFINITY
        }
    }

    /// Extends the plan until it reaches `LOOKAHEAD` meters past `s` on the
    /// current leg, or a dead end that cannot be turned around.
    fn extend(&mut self, s: f64, turn_speed: f64, rng: &mut impl Rng) {
        let mut ahead: f64 = self.legs.iter().map(|&l| self.length(l)).sum::<f64>() - s;
        while !self.ended && ahead < LOOKAHEAD {
            let last = *self.legs.back().expect("route never empty");
            let options = self.continuations(last);
            let next = if options.is_empty() {
                if self.graph.segments()[last.seg].oneway {
                    self.ended = true;
                    *self.limits.back_mut().unwrap() = 0.0;
                    break;
                }
                Leg {
                    seg: last.seg,
                    forward: !last.forward,
                }
            } else {
                // favour going straight on
                let weights: Vec<f64> = options
                    .iter()
                    .map(|&o| {
                        if self.turn_limit(last, o, turn_speed).is_finite() {
                            1.0
                        } else {
                            2.0
                        }
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut pick = rng.gen_range(0.0..total);
                let mut chosen = options[options.len() - 1];
                for (o, w) in options.iter().zip(&weights) {
                    if pick < *w {
                        chosen = *o;
                        break;
                    }
                    pick -= w;
                }
                chosen
            };
            *self.limits.back_mut().unwrap() = self.turn_limit(last, next, turn_speed);
            self.legs.push_back(next);
            self.limits.push_back(f64::INFINITY);
            ahead += self.length(next);
        }
    }

    /// Highest speed from which every limit ahead can still be met braking
    /// at `accel`.
    fn speed_cap(&self, s: f64, accel: f64) -> f64 {
        let mut cap = f64::INFINITY;
        let mut dist = -s;
        for (k, (&leg, &limit)) in self.legs.iter().zip(&self.limits).enumerate() {
            let vmax = self.graph.segments()[leg.seg].max_speed;
            let start = dist.max(0.0);
            cap = cap.min((vmax * vmax + 2.0 * accel * start).sqrt());
            dist += self.length(leg);
            if limit.is_finite() {
                cap = cap.min((limit * limit + 2.0 * accel * dist.max(0.0)).sqrt());
            }
            if k > 0 && dist > LOOKAHEAD {
                break;
            }
        }
        cap
    }
}

/// Random drive over the directed dual graph.
///
/// The vehicle follows center lines, accelerates and brakes at up to
/// `max_accel`, slows to `turn_speed` before sharp turns and makes a U-turn
/// at dead ends of two-way roads. A drive that reaches the end of a oneway
/// dead end stops there, so the result may be shorter than configured.
pub fn generate_trajectory(graph: &RoadGraph, cfg: &DriveConfig, seed: u64) -> Result<Vec<TruthEpoch>> {
    if !(cfg.epoch_rate > 0.0 && cfg.duration >= 0.0 && cfg.max_accel > 0.0 && cfg.turn_speed > 0.0) {
        return Err(Error::Config("drive rates and limits must be positive".into()));
    }
    let mut rng = stream_rng(seed, TRAJECTORY_STREAM);
    let first = graph.segments().choose(&mut rng).expect("graph is non-empty");
    let forward = first.oneway || rng.gen_bool(0.5);
    let mut route = Route {
        graph,
        legs: VecDeque::from([Leg {
            seg: first.id,
            forward,
        }]),
        limits: VecDeque::from([f64::INFINITY]),
        ended: false,
    };
    let mut s = rng.gen_range(0.0..first.geometry.length);
    let mut v: f64 = 0.0;
    let dt_epoch = 1.0 / cfg.epoch_rate;
    let count = (cfg.duration * cfg.epoch_rate).round() as usize;
    let substeps = ((dt_epoch / SUBSTEP).ceil() as usize).max(1);
    let h = dt_epoch / substeps as f64;

    let mut out = Vec::with_capacity(count);
    route.extend(s, cfg.turn_speed, &mut rng);
    'epochs: for k in 0..count {
        let leg = route.legs[0];
        let start = route.start(leg);
        let (dx, dy) = route.direction(leg);
        out.push(TruthEpoch {
            time: k as f64 * dt_epoch,
            position: EnuPoint::horizontal(start.east + s * dx, start.north + s * dy),
            velocity: Vector3::new(v * dx, v * dy, 0.0),
            segment: leg.seg,
        });
        for _ in 0..substeps {
            let cap = route.speed_cap(s, cfg.max_accel);
            let target = cap.min(v + cfg.max_accel * h);
            v = target.max(v - cfg.max_accel * h).max(0.0);
            s += v * h;
            while s >= route.length(route.legs[0]) {
                if route.legs.len() == 1 {
                    // end of a oneway dead end
                    break 'epochs;
                }
                s -= route.length(route.legs[0]);
                route.legs.pop_front();
                route.limits.pop_front();
            }
            if route.ended && route.legs.len() == 1 {
                let remaining = route.length(route.legs[0]) - s;
                if remaining < 1.0 && v < 0.5 {
                    break 'epochs;
                }
            }
            route.extend(s, cfg.turn_speed, &mut rng);
        }
    }
    Ok(out)
}

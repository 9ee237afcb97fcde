//! The desk-scale evaluation corpus: 14 violation scenes carrying 23
//! scripted violations (red light 4 scenes / 4 vehicles, breakdown lane 3/6,
//! pedestrian crossing 1/1, illegal parking 2/6, following distance 2/2,
//! crosswalk parking 2/4) plus one violation-free control variant per scene
//! for false-positive measurement. Scene geometry varies deterministically
//! with the corpus seed.

use super::{
    ActorSpec, LightScriptEntry, NoiseConfig, PlantedViolation, ScenarioSpec, Waypoint,
};
use crate::ingest::ClassLabel;
use crate::light::LightColor;
use crate::violations::ViolationKind;

const FPS: f64 = 10.0;
const DIMS: (u32, u32) = (640, 360);

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic geometry jitter in [-1, 1] for scene variety.
fn vary(seed: u64, scene: u64, k: u64) -> f64 {
    let h = splitmix(seed ^ splitmix(scene.wrapping_mul(31).wrapping_add(k)));
    (h % 2001) as f64 / 1000.0 - 1.0
}

fn wp(frame: u64, cx: f64, cy: f64, w: f64, h: f64) -> Waypoint {
    Waypoint { frame, cx, cy, w, h }
}

fn actor(id: u32, label: ClassLabel, waypoints: Vec<Waypoint>) -> ActorSpec {
    ActorSpec {
        id,
        label,
        waypoints,
        plate: None,
    }
}

fn scene(
    scene_id: String,
    seed: u64,
    index: u64,
    duration_frames: u64,
    render_frames: bool,
) -> ScenarioSpec {
    ScenarioSpec {
        scene_id,
        seed: splitmix(seed.wrapping_mul(1000).wrapping_add(index)),
        fps: FPS,
        frame_dims: DIMS,
        duration_frames,
        actors: Vec::new(),
        planted: Vec::new(),
        light_script: Vec::new(),
        noise: NoiseConfig::default(),
        render_frames,
    }
}

/// Ego stop-and-go displacement used by the parking scenes: always forward,
/// with strong within-window variation so displacement correlation has
/// signal to latch onto, yet slow enough (peak 8 px/frame) that newborn
/// zero-velocity tracks still clear the IoU gate. Delta per frame is
/// 4 + 4*sin(0.3 f).
fn ego_flow(f: u64) -> f64 {
    let t = f as f64;
    4.0 * t + (4.0 / 0.3) * (1.0 - (0.3 * t).cos())
}

/// Waypoints tracing `base + ego_flow` sampled every `step` frames.
fn flow_waypoints(
    base_x: f64,
    cy: f64,
    w0: f64,
    w_growth: f64,
    aspect: f64,
    frames: u64,
    step: u64,
) -> Vec<Waypoint> {
    let mut wps = Vec::new();
    let mut f = 0;
    while f < frames {
        let w = w0 + w_growth * f as f64;
        wps.push(wp(f, base_x + ego_flow(f), cy, w, w / aspect));
        f += step;
    }
    wps
}

fn red_light_scene(seed: u64, i: u64, control: bool) -> ScenarioSpec {
    let suffix = if control { "_control" } else { "" };
    let mut s = scene(
        format!("red_light_{}{}", i + 1, suffix),
        seed,
        10 + i * 2 + control as u64,
        110,
        true,
    );
    let v0 = vary(seed, 10 + i, 0);
    let v1 = vary(seed, 10 + i, 1);

    let mut light = actor(
        100,
        ClassLabel::TrafficLight,
        vec![
            wp(0, 520.0 + v0 * 12.0, 56.0, 18.0, 48.0),
            wp(109, 520.0 + v0 * 12.0, 56.0, 18.0, 48.0),
        ],
    );
    light.waypoints[1].frame = 109;
    s.actors.push(light);
    s.light_script.push(LightScriptEntry {
        from_frame: 0,
        to_frame: 109,
        color: LightColor::Red,
    });

    // parked car off to the left for texture
    s.actors.push(actor(
        2,
        ClassLabel::Car,
        vec![
            wp(0, 100.0 + v1 * 15.0, 240.0, 74.0, 52.0),
            wp(109, 100.0 + v1 * 15.0, 240.0, 74.0, 52.0),
        ],
    ));

    if control {
        // compliant: approaches the light and holds
        s.actors.push(actor(
            1,
            ClassLabel::Car,
            vec![
                wp(6, 320.0, 200.0, 44.0, 31.0),
                wp(46, 330.0, 205.0, 92.0, 64.0),
                wp(106, 330.0, 205.0, 92.0, 64.0),
            ],
        ));
    } else {
        // geometric shrink: every 20 frames the box scales by 0.62, so any
        // 10-frame window loses >= 34% of its area; starts large enough that
        // the plate stays readable into the violation window
        let mut offender = actor(1, ClassLabel::Car, Vec::new());
        let mut w = 210.0;
        for k in 0..6u64 {
            offender.waypoints.push(wp(
                6 + k * 20,
                320.0 + v1 * 20.0 + k as f64 * 10.0,
                195.0 - k as f64 * 8.0,
                w,
                w * 0.7,
            ));
            w *= 0.62;
        }
        offender.plate = Some(format!("{:02}TV{}", 10 + i * 7, i + 3));
        s.actors.push(offender);
        s.planted.push(PlantedViolation {
            kind: ViolationKind::RedLight,
            actor_id: 1,
            frame_range: (6, 46),
        });
    }
    s
}

fn breakdown_scene(seed: u64, i: u64, control: bool) -> ScenarioSpec {
    let suffix = if control { "_control" } else { "" };
    let mut s = scene(
        format!("breakdown_{}{}", i + 1, suffix),
        seed,
        20 + i * 2 + control as u64,
        150,
        false,
    );
    // twelve congested cars in the left band, barely creeping
    for k in 0..12u64 {
        let x = 36.0 + 28.0 * (k % 6) as f64 + vary(seed, 20 + i, k) * 4.0;
        let y = if k < 6 { 170.0 } else { 230.0 };
        s.actors.push(actor(
            (k + 1) as u32,
            ClassLabel::Car,
            vec![wp(0, x, y, 26.0, 20.0), wp(149, x + 4.0, y, 26.0, 20.0)],
        ));
    }
    for (n, (id, x0, y, w0, start)) in [
        (21u32, 466.0, 245.0, 24.0, 10u64),
        (22u32, 540.0, 290.0, 26.0, 14u64),
    ]
    .iter()
    .enumerate()
    {
        if control {
            // same lane positions, but crawling like everyone else
            s.actors.push(actor(
                *id,
                ClassLabel::Car,
                vec![wp(*start, *x0, *y, *w0, w0 * 0.75), wp(144, x0 + 5.0, *y, *w0, w0 * 0.75)],
            ));
        } else {
            // geometric growth ~0.13/s in area while traffic stands still
            let mut offender = actor(*id, ClassLabel::Car, Vec::new());
            let mut w = *w0;
            for k in 0..5u64 {
                offender.waypoints.push(wp(
                    start + k * 30,
                    x0 + k as f64 * (17.0 + n as f64 * 2.0),
                    *y,
                    w,
                    w * 0.75,
                ));
                w *= 1.219;
            }
            s.actors.push(offender);
            s.planted.push(PlantedViolation {
                kind: ViolationKind::BreakdownLane,
                actor_id: *id,
                frame_range: (*start, start + 120),
            });
        }
    }
    s
}

fn pedestrian_scene(seed: u64, control: bool) -> ScenarioSpec {
    let suffix = if control { "_control" } else { "" };
    let mut s = scene(
        format!("pedestrian_1{suffix}"),
        seed,
        30 + control as u64,
        120,
        false,
    );
    let v = vary(seed, 30, 0);
    let sign_x = 495.0 + v * 8.0;
    s.actors.push(actor(
        50,
        ClassLabel::CrosswalkSign,
        vec![wp(0, sign_x, 120.0, 30.0, 30.0), wp(119, sign_x, 120.0, 30.0, 30.0)],
    ));
    s.actors.push(actor(
        60,
        ClassLabel::Person,
        vec![
            wp(4, sign_x + 23.0, 205.0, 18.0, 42.0),
            wp(116, sign_x + 23.0, 205.0, 18.0, 42.0),
        ],
    ));
    if control {
        // stops fully inside the band for four seconds, then proceeds
        s.actors.push(actor(
            1,
            ClassLabel::Car,
            vec![
                wp(0, 260.0, 240.0, 84.0, 58.0),
                wp(35, 470.0, 240.0, 62.0, 43.0),
                wp(75, 470.0, 240.0, 62.0, 43.0),
                wp(119, 830.0, 240.0, 30.0, 21.0),
            ],
        ));
    } else {
        s.actors.push(actor(
            1,
            ClassLabel::Car,
            vec![
                wp(0, 260.0, 240.0, 84.0, 58.0),
                wp(100, 860.0, 240.0, 30.0, 21.0),
            ],
        ));
        s.planted.push(PlantedViolation {
            kind: ViolationKind::PedestrianCrossing,
            actor_id: 1,
            frame_range: (24, 56),
        });
    }
    s
}

fn illegal_parking_scene(seed: u64, i: u64, control: bool) -> ScenarioSpec {
    let suffix = if control { "_control" } else { "" };
    let mut s = scene(
        format!("illegal_parking_{}{}", i + 1, suffix),
        seed,
        40 + i * 2 + control as u64,
        90,
        false,
    );
    let v = vary(seed, 40 + i, 0);
    s.actors.push(ActorSpec {
        id: 70,
        label: ClassLabel::NoStoppingSign,
        waypoints: flow_waypoints(330.0 + v * 6.0, 115.0, 20.0, 0.15, 1.0, 90, 2),
        plate: None,
    });
    if control {
        // traffic moving with the ego: image-static boxes, nothing parked
        for (id, x, y) in [(71u32, 430.0, 235.0), (72, 480.0, 228.0)] {
            s.actors.push(actor(
                id,
                ClassLabel::Car,
                vec![wp(0, x, y, 40.0, 29.0), wp(89, x + 3.0, y, 40.0, 29.0)],
            ));
        }
    } else {
        for (id, x, y, w0) in [
            (71u32, 345.0, 235.0, 36.0),
            (72, 380.0, 228.0, 34.0),
            (73, 415.0, 242.0, 38.0),
        ] {
            s.actors.push(ActorSpec {
                id,
                label: ClassLabel::Car,
                waypoints: flow_waypoints(x, y, w0, 0.18, 1.38, 90, 2),
                plate: None,
            });
            s.planted.push(PlantedViolation {
                kind: ViolationKind::IllegalParking,
                actor_id: id,
                frame_range: (0, 35),
            });
        }
    }
    // oncoming car on the left half, slow apparent growth
    s.actors.push(actor(
        74,
        ClassLabel::Car,
        vec![wp(0, 195.0, 205.0, 26.0, 19.0), wp(70, 0.0, 210.0, 32.0, 23.0)],
    ));
    s
}

fn following_scene(seed: u64, i: u64, control: bool) -> ScenarioSpec {
    let suffix = if control { "_control" } else { "" };
    let mut s = scene(
        format!("following_{}{}", i + 1, suffix),
        seed,
        50 + i * 2 + control as u64,
        100,
        false,
    );
    let v = vary(seed, 50 + i, 0);
    let lead_x = 330.0 + v * 10.0;
    s.actors.push(actor(
        80,
        ClassLabel::Car,
        vec![wp(0, lead_x, 150.0, 72.0, 50.0), wp(99, lead_x, 150.0, 72.0, 50.0)],
    ));
    s.actors.push(actor(
        82,
        ClassLabel::Car,
        vec![wp(0, 560.0, 140.0, 56.0, 40.0), wp(99, 560.0, 140.0, 56.0, 40.0)],
    ));
    if control {
        // same merge, but takes ~4.2 s to reach the lead's position
        s.actors.push(actor(
            81,
            ClassLabel::Car,
            vec![
                wp(20, 8.0, 255.0, 42.0, 30.0),
                wp(62, lead_x + 2.0, 255.0, 42.0, 30.0),
                wp(95, 600.0, 255.0, 42.0, 30.0),
            ],
        ));
    } else {
        // reaches the lead's x in ~2.1 s
        s.actors.push(actor(
            81,
            ClassLabel::Car,
            vec![
                wp(20, 8.0, 255.0, 42.0, 30.0),
                wp(44, 380.0, 255.0, 42.0, 30.0),
                wp(68, 690.0, 255.0, 42.0, 30.0),
            ],
        ));
        s.planted.push(PlantedViolation {
            kind: ViolationKind::FollowingDistance,
            actor_id: 81,
            frame_range: (20, 44),
        });
    }
    s
}

fn crosswalk_parking_scene(seed: u64, i: u64, control: bool) -> ScenarioSpec {
    let suffix = if control { "_control" } else { "" };
    let mut s = scene(
        format!("crosswalk_parking_{}{}", i + 1, suffix),
        seed,
        60 + i * 2 + control as u64,
        90,
        false,
    );
    let v = vary(seed, 60 + i, 0);
    s.actors.push(ActorSpec {
        id: 90,
        label: ClassLabel::CrosswalkSign,
        waypoints: flow_waypoints(330.0 + v * 6.0, 112.0, 24.0, 0.2, 1.0, 90, 2),
        plate: None,
    });
    if control {
        for (id, x, y) in [(91u32, 370.0, 185.0), (92, 400.0, 172.0)] {
            s.actors.push(actor(
                id,
                ClassLabel::Car,
                vec![wp(0, x, y, 38.0, 28.0), wp(89, x + 3.0, y, 38.0, 28.0)],
            ));
        }
    } else {
        for (id, x, y, w0) in [(91u32, 360.0, 185.0, 38.0), (92, 392.0, 170.0, 36.0)] {
            s.actors.push(ActorSpec {
                id,
                label: ClassLabel::Car,
                waypoints: flow_waypoints(x, y, w0, 0.16, 1.35, 90, 2),
                plate: None,
            });
            s.planted.push(PlantedViolation {
                kind: ViolationKind::CrosswalkParking,
                actor_id: id,
                frame_range: (0, 30),
            });
        }
    }
    s.actors.push(actor(
        94,
        ClassLabel::Car,
        vec![wp(0, 190.0, 210.0, 26.0, 19.0), wp(70, 0.0, 214.0, 32.0, 23.0)],
    ));
    s
}

/// The 14 violation scenes in the table's composition, followed by their 14
/// violation-free controls.
pub fn build_table1_corpus(seed: u64) -> Vec<ScenarioSpec> {
    let mut scenes = Vec::new();
    for control in [false, true] {
        for i in 0..4 {
            scenes.push(red_light_scene(seed, i, control));
        }
        for i in 0..3 {
            scenes.push(breakdown_scene(seed, i, control));
        }
        scenes.push(pedestrian_scene(seed, control));
        for i in 0..2 {
            scenes.push(illegal_parking_scene(seed, i, control));
        }
        for i in 0..2 {
            scenes.push(following_scene(seed, i, control));
        }
        for i in 0..2 {
            scenes.push(crosswalk_parking_scene(seed, i, control));
        }
    }
    scenes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::violations::ViolationConfig;

    #[test]
    fn corpus_matches_published_composition() {
        let corpus = build_table1_corpus(7);
        assert_eq!(corpus.len(), 28);
        let violation_scenes: Vec<_> = corpus.iter().filter(|s| !s.planted.is_empty()).collect();
        assert_eq!(violation_scenes.len(), 14);
        let planted: usize = violation_scenes.iter().map(|s| s.planted.len()).sum();
        assert_eq!(planted, 23);

        let count = |kind: ViolationKind| -> (usize, usize) {
            let scenes = violation_scenes
                .iter()
                .filter(|s| s.planted.iter().any(|p| p.kind == kind))
                .count();
            let vehicles = violation_scenes
                .iter()
                .flat_map(|s| s.planted.iter())
                .filter(|p| p.kind == kind)
                .count();
            (scenes, vehicles)
        };
        assert_eq!(count(ViolationKind::RedLight), (4, 4));
        assert_eq!(count(ViolationKind::BreakdownLane), (3, 6));
        assert_eq!(count(ViolationKind::PedestrianCrossing), (1, 1));
        assert_eq!(count(ViolationKind::IllegalParking), (2, 6));
        assert_eq!(count(ViolationKind::FollowingDistance), (2, 2));
        assert_eq!(count(ViolationKind::CrosswalkParking), (2, 4));

        let controls = corpus.iter().filter(|s| s.planted.is_empty()).count();
        assert_eq!(controls, 14);
    }

    #[test]
    fn every_scene_validates_and_passes_margin_self_check() {
        let cfg = ViolationConfig::default();
        for spec in build_table1_corpus(7) {
            spec.validate().unwrap_or_else(|e| panic!("{}: {e}", spec.scene_id));
            crate::synth::self_check(&spec, &cfg)
                .unwrap_or_else(|e| panic!("{}: {e}", spec.scene_id));
        }
    }

    #[test]
    fn corpus_is_seed_deterministic() {
        let a = build_table1_corpus(42);
        let b = build_table1_corpus(42);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(
                toml::to_string(x).unwrap(),
                toml::to_string(y).unwrap()
            );
        }
        let c = build_table1_corpus(43);
        assert_ne!(
            toml::to_string(&a[0]).unwrap(),
            toml::to_string(&c[0]).unwrap()
        );
    }
}

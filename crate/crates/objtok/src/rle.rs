//! Run-length masks and the text files built from them.
//!
//! A mask is stored as alternating run lengths over its row-major pixels,
//! starting with a run of unset pixels (possibly zero long).

use objtok_core::maskpipe::{MaskSet, ObjectTrack};
use objtok_core::video::Mask;

use crate::Error;

pub fn encode(mask: &Mask) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut n = 0;
    for &b in &mask.bits {
        if b == current {
            n += 1;
        } else {
            runs.push(n);
            current = b;
            n = 1;
        }
    }
    runs.push(n);
    runs
}

pub fn decode(runs: &[usize], height: usize, width: usize) -> Result<Mask, Error> {
    let total: usize = runs.iter().sum();
    if total != height * width {
        return Err(Error::Format(format!(
            "runs cover {total} pixels, mask has {}",
            height * width
        )));
    }
    let mut m = Mask::empty(height, width);
    let mut pos = 0;
    for (i, &n) in runs.iter().enumerate() {
        if i % 2 == 1 {
            m.bits[pos..pos + n].iter_mut().for_each(|b| *b = true);
        }
        pos += n;
    }
    Ok(m)
}

fn line(id: usize, frame: usize, mask: &Mask) -> String {
    let mut s = format!("{id} {frame}");
    for r in encode(mask) {
        s.push(' ');
        s.push_str(&r.to_string());
    }
    s.push('\n');
    s
}

fn parse_line(l: &str, height: usize, width: usize) -> Result<(usize, usize, Mask), Error> {
    let nums: Vec<usize> = l
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad number {t:?} in mask line"))))
        .collect::<Result<_, _>>()?;
    if nums.len() < 3 {
        return Err(Error::Format(format!("short mask line {l:?}")));
    }
    Ok((nums[0], nums[1], decode(&nums[2..], height, width)?))
}

/// Ground-truth masks as lines `obj_id frame_idx runs...`, every object on
/// every frame.
pub fn write_scene_masks(masks: &[Vec<Mask>]) -> String {
    let mut out = String::new();
    for (o, frames) in masks.iter().enumerate() {
        for (f, m) in frames.iter().enumerate() {
            out.push_str(&line(o, f, m));
        }
    }
    out
}

/// Inverse of [`write_scene_masks`] for `objects` objects on `frames`
/// frames.
pub fn read_scene_masks(
    text: &str,
    objects: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Vec<Mask>>, Error> {
    let mut out: Vec<Vec<Option<Mask>>> = vec![vec![None; frames]; objects];
    for l in text.lines().filter(|l| !l.trim().is_empty()) {
        let (o, f, m) = parse_line(l, height, width)?;
        let slot = out
            .get_mut(o)
            .and_then(|v| v.get_mut(f))
            .ok_or_else(|| Error::Format(format!("mask for object {o} frame {f} out of range")))?;
        *slot = Some(m);
    }
    out.into_iter()
        .enumerate()
        .map(|(o, v)| {
            v.into_iter()
                .enumerate()
                .map(|(f, m)| m.ok_or_else(|| Error::Format(format!("missing mask for object {o} frame {f}"))))
                .collect()
        })
        .collect()
}

/// MaskSet file: header `video_id t_o N_oi H W`, then one line per track
/// mask. Empty mask sets record `H W` as `0 0`.
pub fn write_mask_set(set: &MaskSet) -> String {
    let (h, w) = set
        .tracks
        .iter()
        .find_map(|t| t.masks.first())
        .map_or((0, 0), |(_, m)| (m.height, m.width));
    let mut out = format!("{} {} {} {h} {w}\n", set.video_id, set.t_o, set.tracks.len());
    for t in &set.tracks {
        for (f, m) in &t.masks {
            out.push_str(&line(t.id, *f, m));
        }
    }
    out
}

pub fn read_mask_set(text: &str) -> Result<MaskSet, Error> {
    let mut lines = text.lines();
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty mask set file".into()))?
        .split_whitespace()
        .collect();
    if head.len() != 5 {
        return Err(Error::Format("mask set header needs video_id t_o N_oi H W".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad header field {s:?}")));
    let (t_o, n, h, w) = (num(head[1])?, num(head[2])?, num(head[3])?, num(head[4])?);
    let mut tracks: Vec<ObjectTrack> = Vec::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let (id, f, m) = parse_line(l, h, w)?;
        match tracks.last_mut() {
            Some(t) if t.id == id => {
                if t.masks.last().is_some_and(|(lf, _)| *lf >= f) {
                    return Err(Error::Format(format!("track {id} frames not increasing")));
                }
                t.masks.push((f, m));
            }
            _ => tracks.push(ObjectTrack {
                id,
                masks: vec![(f, m)],
            }),
        }
    }
    if tracks.len() != n {
        return Err(Error::Format(format!("header says {n} tracks, found {}", tracks.len())));
    }
    Ok(MaskSet {
        video_id: head[0].to_string(),
        t_o,
        tracks,
    })
}

/// One line per frame, space-separated tags.
pub fn write_tags(tags: &[Vec<String>]) -> String {
    tags.iter().map(|t| t.join(" ") + "\n").collect()
}

pub fn read_tags(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> Mask {
        let mut m = Mask::empty(h, w);
        for &i in on {
            m.bits[i] = true;
        }
        m
    }

    #[test]
    fn run_examples() {
        assert_eq!(encode(&mask(2, 3, &[])), vec![6]);
        assert_eq!(encode(&mask(2, 3, &[0, 1])), vec![0, 2, 4]);
        assert_eq!(encode(&mask(2, 3, &[2, 3, 5])), vec![2, 2, 1, 1]);
        assert!(decode(&[1, 2], 2, 3).is_err());
    }

    #[test]
    fn mask_set_round_trip() {
        let set = MaskSet {
            video_id: "scene00001".into(),
            t_o: 16,
            tracks: vec![
                ObjectTrack {
                    id: 0,
                    masks: vec![(0, mask(4, 4, &[0, 1, 5])), (3, mask(4, 4, &[15]))],
                },
                ObjectTrack {
                    id: 2,
                    masks: vec![(1, mask(4, 4, &[7, 8]))],
                },
            ],
        };
        let text = write_mask_set(&set);
        assert!(text.starts_with("scene00001 16 2 4 4\n"));
        assert_eq!(read_mask_set(&text).unwrap(), set);
    }

    #[test]
    fn tags_round_trip() {
        let t = vec![vec!["circle".to_string(), "idea".to_string()], vec![], vec!["square".to_string()]];
        assert_eq!(read_tags(&write_tags(&t)), t);
    }
}

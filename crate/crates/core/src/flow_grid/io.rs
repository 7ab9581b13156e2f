use std::io::{Read, Write};

use super::{FlowSeries, FlowTensor, Trajectory, TrajectoryPoint};
use crate::error::{Error, Result};

const UFS_MAGIC: &[u8; 4] = b"UFS1";

/// Reads `traj_id,timestamp,lon,lat` rows. Rows of one trajectory must be
/// contiguous; errors carry the 1-based file line.
pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["traj_id", "timestamp", "lon", "lat"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header traj_id,timestamp,lon,lat, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out: Vec<Trajectory> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut current: Option<String> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        let timestamp: i64 = record[1]
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp {:?}", &record[1])))?;
        let lon: f64 = record[2].parse().map_err(|_| parse_err(format!("bad lon {:?}", &record[2])))?;
        let lat: f64 = record[3].parse().map_err(|_| parse_err(format!("bad lat {:?}", &record[3])))?;
        if !lon.is_finite() || !lat.is_finite() {
            return Err(parse_err("non-finite coordinate".into()));
        }
        let point = TrajectoryPoint { lon, lat, timestamp };
        if current.as_deref() == Some(id.as_str()) {
            let traj = out.last_mut().expect("current trajectory exists");
            if traj.points.last().is_some_and(|p| p.timestamp > timestamp) {
                return Err(parse_err(format!("timestamps of trajectory {id} go backwards")));
            }
            traj.points.push(point);
        } else {
            if !seen.insert(id.clone()) {
                return Err(parse_err(format!("rows of trajectory {id} are not contiguous")));
            }
            out.push(Trajectory { points: vec![point] });
            current = Some(id);
        }
    }
    Ok(out)
}

/// Little-endian `UFS1` layout: magic, u32 L, H, W, interval seconds, u64
/// start time, then `L * 2 * H * W` f32 values (interval, channel, row, col).
pub fn write_ufs<W: Write>(series: &FlowSeries, mut w: W) -> Result<()> {
    w.write_all(UFS_MAGIC)?;
    for v in [series.len(), series.height, series.width] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&series.interval_duration.to_le_bytes())?;
    w.write_all(&series.start_time.to_le_bytes())?;
    let mut buf = Vec::with_capacity(series.len() * 2 * series.height * series.width * 4);
    for t in &series.tensors {
        for &v in &t.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_ufs<R: Read>(mut r: R) -> Result<FlowSeries> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != UFS_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected UFS1")));
    }
    let mut u32s = [0u32; 4];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [len, height, width, interval] = u32s.map(|v| v as usize);
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let start_time = u64::from_le_bytes(b);
    if height == 0 || width == 0 {
        return Err(Error::Format(format!("grid {height}x{width}")));
    }
    let per = 2 * height * width;
    let mut raw = vec![0u8; len * per * 4];
    r.read_exact(&mut raw)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    let tensors = raw
        .chunks_exact(per * 4)
        .enumerate()
        .map(|(i, chunk)| FlowTensor {
            height,
            width,
            values: chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            interval_index: i,
        })
        .collect();
    FlowSeries::new(height, width, interval as u32, start_time, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_groups_rows() {
        let text = "traj_id,timestamp,lon,lat\na,0,0.5,0.5\na,10,1.5,0.5\nb,3,0.1,0.1\n";
        let trajs = read_trajectories_csv(text.as_bytes()).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].points.len(), 2);
        assert_eq!(trajs[1].points[0].timestamp, 3);
    }

    #[test]
    fn csv_error_names_line() {
        let text = "traj_id,timestamp,lon,lat\na,0,0.5,0.5\na,oops,1.5,0.5\n";
        match read_trajectories_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "traj_id,timestamp,lon,lat\na,0,0.5,0.5\nb,1,1.5,0.5\na,2,0.5,0.5\n";
        assert!(matches!(read_trajectories_csv(text.as_bytes()), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn empty_csv_has_no_trajectories() {
        assert!(read_trajectories_csv("traj_id,timestamp,lon,lat\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn ufs_header_layout() {
        let t = FlowTensor::from_values(1, 2, vec![1.0, 2.0, 3.0, 4.0], 0).unwrap();
        let s = FlowSeries::new(1, 2, 1800, 42, vec![t]).unwrap();
        let mut buf = Vec::new();
        write_ufs(&s, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"UFS1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 1800);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 42);
        assert_eq!(buf.len(), 28 + 4 * 4);
        assert_eq!(read_ufs(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn ufs_rejects_bad_magic() {
        assert!(matches!(read_ufs(&b"NOPE\0\0\0\0"[..]), Err(Error::Format(_))));
    }
}

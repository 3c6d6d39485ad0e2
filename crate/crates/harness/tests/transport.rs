use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use repli_harness::transport::{Frame, Transport, MAX_FRAME};

fn free_addrs(n: usize) -> Vec<SocketAddr> {
    let ls: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    ls.iter().map(|l| l.local_addr().unwrap()).collect()
}

fn collect(t: &Transport, want: usize, within: Duration) -> Vec<Vec<u8>> {
    let deadline = Instant::now() + within;
    let mut got = Vec::new();
    while got.len() < want && Instant::now() < deadline {
        if let Some((_, p)) = t.recv_timeout(Duration::from_millis(20)) {
            got.push(p);
        }
    }
    got
}

#[test]
fn messages_survive_receiver_restart_without_loss_or_duplication() {
    let addrs = free_addrs(2);
    let sender = Transport::bind(0, &addrs).unwrap();
    let receiver = Transport::bind(1, &addrs).unwrap();
    for i in 0..50u32 {
        sender.send(1, i.to_be_bytes().to_vec()).unwrap();
    }
    let mut got = collect(&receiver, 50, Duration::from_secs(10));
    assert_eq!(got.len(), 50);
    receiver.close();
    for i in 50..100u32 {
        sender.send(1, i.to_be_bytes().to_vec()).unwrap();
    }
    std::thread::sleep(Duration::from_millis(200));
    let receiver = Transport::bind(1, &addrs).unwrap();
    got.extend(collect(&receiver, 50, Duration::from_secs(10)));
    let seen: Vec<u32> = got
        .iter()
        .map(|p| u32::from_be_bytes(p[..4].try_into().unwrap()))
        .collect();
    assert_eq!(seen, (0..100).collect::<Vec<_>>());
    assert!(
        receiver.recv_timeout(Duration::from_millis(200)).is_none(),
        "no duplicates"
    );
}

#[test]
fn oversized_frame_closes_only_that_connection() {
    let addrs = free_addrs(2);
    let receiver = Transport::bind(1, &addrs).unwrap();
    let mut raw = TcpStream::connect(addrs[1]).unwrap();
    raw.write_all(
        &Frame::Hello {
            sender: 0,
            incarnation: 1,
        }
        .encode(),
    )
    .unwrap();
    raw.write_all(&((MAX_FRAME + 1) as u32).to_be_bytes())
        .unwrap();
    raw.write_all(&[1u8; 64]).unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buf = [0u8; 16];
    assert!(
        matches!(raw.read(&mut buf), Ok(0) | Err(_)),
        "connection is closed"
    );
    assert!(receiver.recv_timeout(Duration::from_millis(100)).is_none());
    assert_eq!(
        receiver
            .stats()
            .rejected_frames
            .load(std::sync::atomic::Ordering::Relaxed),
        1
    );

    let sender = Transport::bind(0, &addrs).unwrap();
    sender.send(1, b"ok".to_vec()).unwrap();
    assert_eq!(
        receiver
            .recv_timeout(Duration::from_secs(5))
            .map(|(_, p)| p),
        Some(b"ok".to_vec())
    );
    assert!(sender.send(1, vec![0; MAX_FRAME]).is_err());
}

//! Region permissions: a revoked writer is refused by the memory itself.

use tram::overlay::GroupId;
use tram::transport::{AccessMode, Permission, ProcessId, SharedMemory, Transport};

fn main() {
    let owner = ProcessId::replica(GroupId(0), 0);
    let old = ProcessId::replica(GroupId(0), 1);
    let new = ProcessId::replica(GroupId(0), 2);

    let mut mem: SharedMemory<&str, u64> = SharedMemory::new();
    let log = mem
        .register_region(owner, "log", 16, Permission::readwrite([old]))
        .expect("fresh region");

    let r = mem.remote_write(old, &log, 0, 7).unwrap();
    println!("{old} writes slot 0: {:?}", r.status);

    // The owner hands exclusive write access to a new leader.
    mem.set_permission(owner, &log, old, AccessMode::None).unwrap();
    mem.set_permission(owner, &log, new, AccessMode::ReadWrite).unwrap();

    let r = mem.remote_write(old, &log, 1, 8).unwrap();
    println!("{old} writes slot 1: {:?}", r.status);
    let r = mem.remote_write(new, &log, 1, 9).unwrap();
    println!("{new} writes slot 1: {:?}", r.status);
    let r = mem.remote_read(new, &log, 1).unwrap();
    println!("{new} reads slot 1: {:?}", r.value);

    mem.crash(owner);
    let r = mem.remote_read(new, &log, 0).unwrap();
    println!("after {owner} crashes: {:?}", r.status);
}

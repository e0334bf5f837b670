"""Журнал нарушений границ: один текстовый файл на отчёт дискретной модели.
Пустой файл означает, что все проверки пройдены; записи дописываются по одной."""
from datetime import datetime, timezone
from pathlib import Path

SEP_LINE = "#" * 60


def violation_log_path(output_dir: Path, model_name: str) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    safe = "".join(c for c in model_name if c.isalnum() or c in "-_") or "model"
    return output_dir / f"{safe}_violations.log"


def start_log(path: Path) -> Path:
    """Создаёт (или обнуляет) файл журнала."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")
    return path


def append_violation(path: Path, check: str, where: str, value: float, bound: float, *, header: str | None = None) -> None:
    """Дописывает одно нарушение; header пишется перед первой записью серии."""
    block = f"{check} | {where} | value={value:.12g} | bound={bound:.12g}\n"
    if header is not None:
        ts = datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")
        block = f"{header} started={ts}\n{SEP_LINE}\n" + block
    with open(path, "a", encoding="utf-8") as f:
        f.write(block)


def append_note(path: Path, text: str) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(f"{text}\n")


def read_violations(path: Path) -> list[str]:
    if not path.is_file():
        return []
    return [line for line in path.read_text(encoding="utf-8").splitlines() if " | " in line]

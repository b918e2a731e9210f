"""
三模态预训练工具 - 启动脚本
用法: python run.py <子命令> [参数]，子命令见 python run.py --help
"""

import sys
import os

# 添加当前目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

try:
    from main_controller import main
except ImportError as e:
    print(f"导入模块失败: {e}")
    print("请确保所有依赖模块都已正确安装（pip install -r requirements.txt）")
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main())
